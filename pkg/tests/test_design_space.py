"""Design-space declaration, rule-safe sampling, and theta plumbing."""

import json

import numpy as np
import pytest

import hlsdse.autodiff as ad
from helpers import central_diff, check_rules, enumerate_configs, random_space, rel_err
from hlsdse.design_space import (
    VARIABLE,
    ArrayDecl,
    DesignSpace,
    FuncDecl,
    LoopDecl,
    LoopSetting,
    PragmaConfig,
    canonical_key,
    canonicalize,
    config_from_dict,
    config_to_dict,
    flatten_from_leaves,
    flatten_theta,
    init_theta_uniform,
    load_space,
    sample_config,
    softmax_probs,
    theta_leaf_tensors,
    validate_config,
)
from hlsdse.errors import ConfigError, SpaceValidationError


def _space(loops=(), arrays=(), functions=()):
    return DesignSpace(loops=tuple(loops), arrays=tuple(arrays), functions=tuple(functions))


def _loop(j, parent=-1, bound=8, unroll=(1, 2, 4, 8), ii=(1, 2)):
    return LoopDecl(id=j, parent=parent, bound=bound, unroll_options=tuple(unroll), ii_options=tuple(ii))


# ---------------------------------------------------------------- validation

def test_rejects_bad_parent_order():
    with pytest.raises(SpaceValidationError):
        _space([_loop(0, parent=0)])
    with pytest.raises(SpaceValidationError):
        _space([_loop(0), _loop(1, parent=2)])


def test_rejects_nondivisor_unroll():
    with pytest.raises(SpaceValidationError):
        _space([_loop(0, bound=8, unroll=(1, 3))])


def test_rejects_unroll_without_one():
    with pytest.raises(SpaceValidationError):
        _space([_loop(0, unroll=(2, 4))])


def test_rejects_bad_ii_and_factors():
    with pytest.raises(SpaceValidationError):
        _space([_loop(0, ii=())])
    with pytest.raises(SpaceValidationError):
        _space(arrays=[ArrayDecl("a", ("block",), (2, 4))])  # missing factor 1
    with pytest.raises(SpaceValidationError):
        _space(arrays=[ArrayDecl("a", ("diagonal",), (1,))])


def test_rejects_duplicate_names():
    with pytest.raises(SpaceValidationError):
        _space(arrays=[ArrayDecl("a", ("block",), (1,)), ArrayDecl("a", ("block",), (1,))])
    with pytest.raises(SpaceValidationError):
        _space(functions=[FuncDecl("f", True), FuncDecl("f", False)])


def test_schema_roundtrip():
    sp = _space([_loop(0), _loop(1, parent=0, bound=4, unroll=(1, 2, 4))],
                [ArrayDecl("a", ("block", "cyclic"), (1, 2))],
                [FuncDecl("f", True)])
    again = DesignSpace.from_dict(json.loads(json.dumps(sp.to_dict())))
    assert again.to_dict() == sp.to_dict()


def test_load_space_documented_keys(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({
        "loops": [{"id": 0, "parent": -1, "bound": 4, "unroll_options": [1, 2, 4], "ii_options": [1]}],
        "arrays": [{"name": "a", "types": ["block"], "factors": [1, 2]}],
        "functions": [],
    }))
    sp = load_space(p)
    assert sp.loops[0].unroll_options == (1, 2, 4)


# ------------------------------------------------------------------- theta

def test_uniform_theta_probs():
    sp = _space([_loop(0, unroll=(1, 2, 4))])
    theta = init_theta_uniform(sp)
    by_kind = {s.kind: s for s in theta.sites}
    assert np.allclose(softmax_probs(by_kind["unroll"].logits), [1 / 3] * 3)
    assert np.allclose(softmax_probs(by_kind["pipeline"].logits), [0.5, 0.5])


def test_theta_site_inventory():
    sp = _space([_loop(0)], [ArrayDecl("a", ("block", "cyclic"), (1, 2, 4))], [FuncDecl("f", True)])
    theta = init_theta_uniform(sp)
    kinds = sorted(s.kind for s in theta.sites)
    assert kinds == ["ii", "inline", "partition", "pipeline", "unroll"]
    part = next(s for s in theta.sites if s.kind == "partition")
    # factor 1 collapses block/cyclic into one none option
    assert len(part.options) == 1 + 2 * 2


def test_functions_only_space():
    sp = _space(functions=[FuncDecl("f", True)])
    theta = init_theta_uniform(sp)
    assert len(theta.sites) == 1 and len(theta.sites[0].options) == 2


def test_site_probs_properties():
    assert np.allclose(softmax_probs(np.zeros(2)), [0.5, 0.5])
    assert np.allclose(softmax_probs(np.array([np.log(2.0), 0.0])), [2 / 3, 1 / 3])
    big = softmax_probs(np.array([1000.0, 0.0]))
    assert np.isfinite(big).all() and abs(big.sum() - 1.0) < 1e-9
    with pytest.raises(ValueError):
        softmax_probs(np.array([np.nan, 0.0]))


def test_flatten_theta_shape_and_segments():
    sp = _space([_loop(0, unroll=(1, 2, 4))])
    theta = init_theta_uniform(sp)
    vec = flatten_theta(theta)
    assert vec.shape == (3 + 2 + 2,)
    assert np.allclose(vec[:3], 1 / 3) and np.allclose(vec[3:5], 0.5)
    assert np.allclose(flatten_theta(theta), vec)


@pytest.mark.parametrize("seed", range(5))
def test_flatten_theta_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    sp = random_space(rng)
    theta = init_theta_uniform(sp)
    for s in theta.sites:
        s.logits = rng.normal(0, 1, size=len(s.options))
    w_full = None

    def loss_from_logits(flat_logits):
        pos = 0
        vals = []
        for s in theta.sites:
            n = len(s.options)
            vals.append(flat_logits[pos:pos + n])
            pos += n
        probs = np.concatenate([softmax_probs(v) for v in vals])
        return float(probs @ w_full)

    dim = sum(len(s.options) for s in theta.sites)
    w_full = rng.normal(0, 1, size=dim)
    leaves = theta_leaf_tensors(theta)
    flat = flatten_from_leaves(theta, leaves)
    out = ad.sum_all(ad.mul(flat, ad.tensor(w_full[None, :])))
    out.backward()
    got = np.concatenate([leaf.grad for leaf in leaves])
    x0 = np.concatenate([s.logits for s in theta.sites])
    num = central_diff(loss_from_logits, x0)
    assert rel_err(got, num) < 1e-6


# ---------------------------------------------------------------- sampling

def test_rule_compliance_randomized():
    rng = np.random.default_rng(11)
    for _ in range(25):
        sp = random_space(rng)
        theta = init_theta_uniform(sp)
        for s in theta.sites:
            s.logits = rng.normal(0, 2, size=len(s.options))
        for _ in range(80):
            cfg = sample_config(theta, sp, rng)
            assert check_rules(cfg, sp) == []
            validate_config(cfg, sp)


def test_r1_descendants_forced():
    sp = _space([_loop(0, bound=8, unroll=(1, 2)), _loop(1, parent=0, bound=4, unroll=(1, 2, 4))])
    theta = init_theta_uniform(sp)
    # force the outer pipeline choice
    next(s for s in theta.sites if s.key == "loop0.pipeline").logits = np.array([-30.0, 30.0])
    rng = np.random.default_rng(0)
    for _ in range(50):
        cfg = sample_config(theta, sp, rng)
        assert cfg.loops[0].pipelined
        assert cfg.loops[1] == LoopSetting(4, False, None)


def test_r2_full_unroll_never_pipelined():
    sp = _space([_loop(0, bound=8, unroll=(1, 8))])
    theta = init_theta_uniform(sp)
    next(s for s in theta.sites if s.kind == "pipeline").logits = np.array([-30.0, 30.0])
    # heavy weight on the full factor: masking must still exclude it
    next(s for s in theta.sites if s.kind == "unroll").logits = np.array([0.0, 30.0])
    rng = np.random.default_rng(1)
    for _ in range(50):
        cfg = sample_config(theta, sp, rng)
        assert cfg.loops[0].pipelined and cfg.loops[0].unroll == 1


def test_r3_variable_descendant_blocks_pipeline():
    sp = _space([
        _loop(0, bound=8, unroll=(1, 2)),
        LoopDecl(id=1, parent=0, bound=VARIABLE, unroll_options=(1, 2), ii_options=(1,)),
    ])
    theta = init_theta_uniform(sp)
    next(s for s in theta.sites if s.key == "loop0.pipeline").logits = np.array([-30.0, 30.0])
    rng = np.random.default_rng(2)
    for _ in range(50):
        assert not sample_config(theta, sp, rng).loops[0].pipelined


def test_bound_one_never_pipelines():
    sp = _space([_loop(0, bound=1, unroll=(1,))])
    theta = init_theta_uniform(sp)
    next(s for s in theta.sites if s.kind == "pipeline").logits = np.array([-30.0, 30.0])
    rng = np.random.default_rng(3)
    for _ in range(20):
        assert not sample_config(theta, sp, rng).loops[0].pipelined


def test_masked_sampling_respects_zero_mass():
    # with one option's probability forced to ~0, it never appears
    sp = _space([_loop(0, bound=8, unroll=(1, 2, 4))])
    theta = init_theta_uniform(sp)
    next(s for s in theta.sites if s.kind == "unroll").logits = np.array([0.0, -40.0, 0.0])
    rng = np.random.default_rng(4)
    seen = {sample_config(theta, sp, rng).loops[0].unroll for _ in range(300)}
    assert 2 not in seen and seen == {1, 4}


def test_sampling_deterministic_per_seed():
    sp = _space([_loop(0)], [ArrayDecl("a", ("block", "cyclic"), (1, 2))], [FuncDecl("f", True)])
    theta = init_theta_uniform(sp)
    a = [sample_config(theta, sp, np.random.default_rng(7)) for _ in range(5)]
    b = [sample_config(theta, sp, np.random.default_rng(7)) for _ in range(5)]
    assert a == b


# ------------------------------------------------------------ canonical key

def test_canonical_key_masks_dead_fields():
    sp = _space([_loop(0, bound=8, unroll=(1, 2))])
    k1 = canonical_key(PragmaConfig((LoopSetting(2, False, 1),), (), ()), sp)
    k2 = canonical_key(PragmaConfig((LoopSetting(2, False, 2),), (), ()), sp)
    assert k1 == k2
    k3 = canonical_key(PragmaConfig((LoopSetting(1, False, None),), (), ()), sp)
    assert k3 != k1


def test_canonical_key_masks_forced_descendants():
    sp = _space([_loop(0, bound=8, unroll=(1, 2)), _loop(1, parent=0, bound=4, unroll=(1, 2, 4))])
    base = (LoopSetting(2, True, 1), LoopSetting(4, False, None))
    k1 = canonical_key(PragmaConfig(base, (), ()), sp)
    # descendant fields are forced; a differing raw II there cannot matter
    k2 = canonical_key(PragmaConfig((base[0], LoopSetting(4, False, 2)), (), ()), sp)
    assert k1 == k2


def test_canonical_key_partition_factor_one_is_none():
    sp = _space(arrays=[ArrayDecl("a", ("block", "cyclic"), (1, 2))])
    k1 = canonical_key(PragmaConfig((), (("block", 1),), ()), sp)
    k2 = canonical_key(PragmaConfig((), (("cyclic", 1),), ()), sp)
    k3 = canonical_key(PragmaConfig((), (("none", 1),), ()), sp)
    assert k1 == k2 == k3


def test_canonical_key_counts_match_enumeration():
    rng = np.random.default_rng(5)
    for _ in range(5):
        sp = random_space(rng, max_loops=2)
        enum = enumerate_configs(sp)
        keys = {canonical_key(cfg, sp) for cfg in enum.values()}
        assert len(keys) == len(enum)


def test_config_dict_roundtrip():
    cfg = PragmaConfig((LoopSetting(2, True, 4),), (("block", 2),), (True,))
    again = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
    assert again == cfg


def test_validate_config_rejects_rule_breaks():
    sp = _space([_loop(0, bound=8, unroll=(1, 8))])
    with pytest.raises(ConfigError):
        validate_config(PragmaConfig((LoopSetting(8, True, 1),), (), ()), sp)


def test_canonicalize_idempotent():
    rng = np.random.default_rng(6)
    sp = random_space(rng)
    theta = init_theta_uniform(sp)
    for _ in range(30):
        cfg = sample_config(theta, sp, rng)
        c1 = canonicalize(cfg, sp)
        assert canonicalize(c1, sp) == c1
