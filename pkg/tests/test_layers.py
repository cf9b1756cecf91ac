from dataclasses import replace

import numpy as np
import pytest

from graphix.graph import GraphError, build_graph
from graphix.layers import (Alignment, CheckpointMismatch, EdgePlan, EncoderConfig,
                            EncoderInputs, Variant, encode, ffn, graphix_layer,
                            init_encoder_params, migrate_semantic_params, mha, param_group,
                            rgat_block, semantic_block, semantic_stack)
from graphix.serializer import Vocabulary, serialize
from graphix.tensor import ParamStore, ShapeError, save_checkpoint

import oracles
from oracles import allergy_example

CFG = EncoderConfig(d_m=16, h=4, layers=2, vocab_size=64, max_len=64)


def params_for(cfg, seed=0):
    return init_encoder_params(cfg, ParamStore(seed))


def example_inputs():
    q, db = allergy_example()
    x, g = serialize(q, db), build_graph(q, db)
    return x, g, Vocabulary(dict.fromkeys(x.tokens))


def test_mha_ffn_semantic_match_loops():
    rng = np.random.default_rng(0)
    p = params_for(CFG)
    H = rng.normal(size=(7, 16))
    assert np.allclose(mha(H, p, CFG), oracles.ref_mha(H, p, "enc.0.sem.attn.", 4, 4, 4),
                       atol=1e-12)
    assert np.allclose(ffn(H, p), oracles.ref_ffn(H, p, "enc.0.sem.ffn."), atol=1e-12)
    assert np.allclose(semantic_block(H, p, CFG, 1), oracles.ref_semantic(H, p, 1, CFG),
                       atol=1e-12)


def test_mha_rejects_bad_width():
    with pytest.raises(ShapeError):
        mha(np.ones((3, 5)), params_for(CFG), CFG)


def test_rgat_matches_loop_reference_and_normalises():
    _, g, _ = example_inputs()
    p = params_for(CFG)
    E = np.random.default_rng(1).normal(size=(len(g), 16))
    out, alpha, plan = rgat_block(E, g, p, CFG, return_attention=True)
    edges = list(zip(*(a.tolist() for a in g.edge_arrays())))
    ref, ref_alpha = oracles.ref_rgat(E, edges, p, "enc.0.rgat.", "enc.phi", CFG.ln_eps)
    assert np.allclose(out, ref, atol=1e-12)
    sums = np.zeros(len(g))
    np.add.at(sums, plan.dst, alpha[:, 0])
    assert np.all(np.abs(sums - 1) < 1e-12)
    for i in range(len(g)):
        assert np.allclose(np.sort(alpha[plan.dst == i, 0]), np.sort(ref_alpha[i]), atol=1e-14)


def test_rgat_permutation_equivariance_is_exact():
    _, g, _ = example_inputs()
    p = params_for(CFG)
    rng = np.random.default_rng(2)
    E = rng.normal(size=(len(g), 16))
    src, dst, rel = g.edge_arrays()
    out = rgat_block(E, EdgePlan.from_arrays(len(g), src, dst, rel), p, CFG)
    perm = rng.permutation(len(g))
    pos = np.argsort(perm)  # old index -> new index
    plan = EdgePlan.from_arrays(len(g), pos[src], pos[dst], rel)
    assert np.array_equal(rgat_block(E[perm], plan, p, CFG), out[perm])


def test_rgat_uses_relation_types():
    _, g, _ = example_inputs()
    p = params_for(CFG)
    E = np.random.default_rng(3).normal(size=(len(g), 16))
    src, dst, rel = g.edge_arrays()
    a = rgat_block(E, EdgePlan.from_arrays(len(g), src, dst, rel), p, CFG)
    b = rgat_block(E, EdgePlan.from_arrays(len(g), src, dst, (rel + 2) % 28), p, CFG)
    assert not np.allclose(a, b)


def test_multi_head_rgat_normalises_per_head():
    cfg = replace(CFG, rgat_heads=4)
    _, g, _ = example_inputs()
    E = np.random.default_rng(4).normal(size=(len(g), 16))
    _, alpha, plan = rgat_block(E, g, params_for(cfg), cfg, return_attention=True)
    sums = np.zeros((len(g), 4))
    np.add.at(sums, plan.dst, alpha)
    assert np.all(np.abs(sums - 1) < 1e-12)


def test_empty_neighbourhood_rejected():
    with pytest.raises(GraphError, match="empty relational neighborhood"):
        EdgePlan.from_arrays(3, [0, 1], [1, 0], [4, 5])
    with pytest.raises(ShapeError):
        rgat_block(np.ones((2, 16)), EdgePlan.from_arrays(3, [0, 1, 2], [0, 1, 2], [28] * 3),
                   params_for(CFG), CFG)


def test_graphix_layer_is_semantic_plus_scattered_graph_output():
    x, g, vocab = example_inputs()
    p = params_for(CFG)
    H = np.random.default_rng(5).normal(size=(len(x), 16))
    out = graphix_layer(H, g, x.node_spans, p, CFG, 0)
    hs = semantic_block(H, p, CFG, 0)
    e0 = np.stack([hs[a:b].mean(axis=0) for a, b in x.node_spans])
    eg = rgat_block(e0, g, p, CFG)
    expected = hs.copy()
    for i, (a, b) in enumerate(x.node_spans):
        expected[a:b] += eg[i]
    assert np.allclose(out, expected, atol=1e-12)
    for pos in list(x.separators) + list(range(*x.db_name_span)):
        assert np.array_equal(out[pos], hs[pos])


def test_alignment_rejects_overlap():
    with pytest.raises(GraphError, match="overlaps"):
        Alignment.from_spans([(0, 2), (1, 3)], 4)
    with pytest.raises(GraphError, match="outside"):
        Alignment.from_spans([(0, 5)], 4)


@pytest.mark.parametrize("seed", range(5))
def test_vanilla_equals_semantic_stack(seed):
    cfg = replace(CFG, variant=Variant.VANILLA)
    q, db = oracles.random_instance(np.random.default_rng(seed))
    x, g = serialize(q, db), build_graph(q, db)
    vocab = Vocabulary(dict.fromkeys(x.tokens))
    p = params_for(cfg, seed)
    assert np.array_equal(encode(x, g, cfg, p, vocab), semantic_stack(x, cfg, p, vocab))


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("layers", [0, 1, 2])
def test_encoder_shapes(variant, layers):
    cfg = replace(CFG, variant=variant, layers=layers)
    x, g, vocab = example_inputs()
    h = encode(x, g, cfg, params_for(cfg), vocab)
    assert h.shape == (len(x), 16) and np.all(np.isfinite(h))


def test_parameter_groups():
    p = params_for(CFG)
    groups = {param_group(n) for n in p}
    assert groups == {"theta", "psi", "phi"}
    assert param_group("enc.phi") == "phi" and param_group("enc.1.rgat.wq") == "psi"
    assert param_group("dec.out.w") == "upsilon" and param_group("embed.tokens") == "theta"
    severed = params_for(replace(CFG, variant="severed"))
    assert any(n.startswith("enc.gnn1.rgat.") for n in severed)
    assert not any(param_group(n) in ("psi", "phi") for n in params_for(replace(CFG,
                                                                               variant="vanilla")))
    per_layer = params_for(replace(CFG, shared_phi=False))
    assert "enc.0.phi" in per_layer and "enc.1.phi" in per_layer


def test_tied_query_key_initialisation():
    p = params_for(CFG)
    assert np.array_equal(p["enc.0.sem.attn.wq"], p["enc.0.sem.attn.wk"])
    assert not np.array_equal(p["enc.0.rgat.wq"], p["enc.0.rgat.wk"])
    untied = params_for(replace(CFG, tie_qk_init=False))
    assert not np.array_equal(untied["enc.0.sem.attn.wq"], untied["enc.0.sem.attn.wk"])


def test_inputs_must_agree_with_graph():
    q, db = allergy_example()
    x = serialize(q, db)
    other = build_graph(*oracles.random_instance(np.random.default_rng(0)))
    with pytest.raises(GraphError, match="node order"):
        EncoderInputs.build(x, other, Vocabulary(x.tokens))
    small = replace(CFG, max_len=8)
    with pytest.raises(ShapeError, match="max_len"):
        encode(x, build_graph(q, db), small, params_for(small), Vocabulary(x.tokens))


def test_config_round_trip(tmp_path):
    cfg = replace(CFG, variant="severed", d_z=8)
    assert EncoderConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        EncoderConfig(d_m=10, h=4)
    with pytest.raises(ValueError):
        EncoderConfig(d_z=10, rgat_heads=4)


def test_migration_keeps_semantics_and_refreshes_graph(tmp_path):
    vanilla = replace(CFG, variant="vanilla")
    source = params_for(vanilla, seed=3)
    save_checkpoint(source, tmp_path / "vanilla_ck")
    migrated = migrate_semantic_params(tmp_path / "vanilla_ck", CFG, seed=11)
    fresh = params_for(CFG, seed=11)
    for name in migrated:
        if param_group(name) == "theta":
            assert np.array_equal(migrated[name], source[name])
        else:
            assert np.array_equal(migrated[name], fresh[name])
    x, g, vocab = example_inputs()
    assert not np.allclose(encode(x, g, CFG, migrated, vocab),
                           semantic_stack(x, CFG, migrated, vocab))


def test_migration_errors(tmp_path):
    shallow = replace(CFG, layers=1, variant="vanilla")
    save_checkpoint(params_for(shallow), tmp_path / "one")
    with pytest.raises(CheckpointMismatch, match="lacks"):
        migrate_semantic_params(tmp_path / "one", CFG)
    wide = replace(CFG, d_m=32, variant="vanilla")
    save_checkpoint(params_for(wide), tmp_path / "wide")
    with pytest.raises(CheckpointMismatch, match="shape"):
        migrate_semantic_params(tmp_path / "wide", CFG)
