import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zcpt.spaces import (NB201_OPS, TOY_OPS, SpaceError, chain_space, darts_space,
                         encode_genotype, enumerate_space, instantiate, nb201_space,
                         parse_genotype, space_from_name, space_size, supernet, topology_prune)

NB = nb201_space()
ARCH_0 = "|none~0|+|nor_conv_3x3~0|avg_pool_3x3~1|+|none~0|nor_conv_3x3~1|none~2|"


def test_full_discretization():
    a = supernet(NB)
    for e in range(6):
        a = a.discretize(e, NB201_OPS[e % 5])
    assert a.t == 6 and a.fully_discretized
    assert parse_genotype(NB, encode_genotype(a)) == a


def test_discretize_semantics():
    a0 = supernet(NB)
    a1 = a0.discretize(0, "nor_conv_3x3")
    assert a1.active[0] == ("nor_conv_3x3",)
    assert len(a1.mixed_edges()) == 5
    assert a0.t == 0 and a0.active[0] == NB201_OPS  # value semantics
    with pytest.raises(SpaceError):
        a1.discretize(0, "none")
    with pytest.raises(SpaceError):
        a0.perturb(0, "none").discretize(0, "none")


def test_perturb_semantics():
    sp = chain_space(1, ops=("skip", "conv_1x1", "conv_3x3"))
    a = supernet(sp).perturb(0, "skip")
    assert a.active[0] == ("conv_1x1", "conv_3x3")
    assert not a.fixed[0]
    assert a.discretize(0, "conv_3x3").op(0) == "conv_3x3"
    with pytest.raises(SpaceError):
        a.perturb(0, "conv_1x1").perturb(0, "conv_3x3")
    variants = {supernet(NB).perturb(2, o) for o in NB201_OPS}
    assert len(variants) == 5


def test_states_hashable_and_equal():
    a, b = supernet(NB).discretize(1, "none"), supernet(NB).discretize(1, "none")
    assert a == b and hash(a) == hash(b)


def test_parse_listing_genotype():
    a = parse_genotype(NB, ARCH_0)
    assert a.t == 6
    assert [a.op(e) for e in range(6)] == ["none", "nor_conv_3x3", "avg_pool_3x3",
                                           "none", "nor_conv_3x3", "none"]


def test_round_trip_all_nb201_genotypes():
    genos = list(enumerate_space(NB))
    assert len(genos) == 15625 == len(set(genos))
    for g in genos:
        assert encode_genotype(parse_genotype(NB, g)) == g


@pytest.mark.parametrize("bad", ["|bogus~0|+|none~0|none~1|+|none~0|none~1|none~2|",
                                 "|none~0|", "", "|none~0|+|none~0|none~1|+|none~0|none~1|",
                                 "|none~1|+|none~0|none~1|+|none~0|none~1|none~2|",
                                 "|none0|+|none~0|none~1|+|none~0|none~1|none~2|",
                                 "|none~0|+|none~1|none~0|+|none~0|none~1|none~2|"])
def test_parse_errors(bad):
    with pytest.raises(SpaceError):
        parse_genotype(NB, bad)


def test_enumeration_counts():
    assert space_size(NB) == 15625
    assert len(list(enumerate_space(space_from_name("chain4k3")))) == 81
    assert len(list(enumerate_space(chain_space(1, ops=("skip",))))) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.data())
def test_chain_round_trip(layers, data):
    sp = chain_space(layers)
    ops = data.draw(st.lists(st.sampled_from(TOY_OPS), min_size=layers, max_size=layers))
    a = supernet(sp)
    for e, o in enumerate(ops):
        a = a.discretize(e, o)
    assert parse_genotype(sp, encode_genotype(a)) == a


def _features(a, seed=0, width=4, masked=False):
    net = instantiate(a, width, init_seed=seed, input_shape=(3, 8, 8), masked=masked)
    x = np.random.default_rng(0).normal(size=(4, 3, 8, 8))
    net.forward(x)
    v = net.graph._values
    return v[net.features].copy(), v[net.stem].copy()


def test_chain_skip_is_identity():
    a = parse_genotype(chain_space(1), "|skip~0|")
    feat, stem = _features(a)
    assert np.array_equal(feat, stem)


def test_mixed_skip_none_halves():
    a = supernet(chain_space(1, ops=("skip", "none")))
    feat, stem = _features(a)
    assert np.allclose(feat, stem / 2, rtol=0, atol=1e-15)


@pytest.mark.parametrize("space", [chain_space(1), chain_space(3),
                                   chain_space(2, ops=("none", "skip", "conv_3x3"))])
def test_mixed_edge_is_mean_of_candidates(space):
    # shared per-name init makes every discretized variant reuse the
    # supernet's weights for the ops it keeps
    a = supernet(space)
    for e in range(space.num_edges - 1):
        a = a.discretize(e, space.ops[-1])
    last = space.num_edges - 1
    mixed, _ = _features(a)
    singles = [_features(a.discretize(last, o))[0] for o in space.ops]
    assert np.allclose(mixed, np.mean(singles, axis=0), atol=1e-12)


def test_masked_branches_do_not_change_output():
    a = supernet(chain_space(3)).perturb(1, "conv_3x3").discretize(0, "skip")
    plain, _ = _features(a)
    masked, _ = _features(a, masked=True)
    assert np.array_equal(plain, masked)


def test_instantiate_deterministic_params():
    a = supernet(NB)
    p1 = instantiate(a, 4, init_seed=3, input_shape=(3, 8, 8)).graph.param_vector()
    p2 = instantiate(a, 4, init_seed=3, input_shape=(3, 8, 8)).graph.param_vector()
    p3 = instantiate(a, 4, init_seed=4, input_shape=(3, 8, 8)).graph.param_vector()
    assert np.array_equal(p1, p2) and not np.array_equal(p1, p3)


def test_instantiate_rejects_bad_config():
    with pytest.raises(SpaceError):
        instantiate(supernet(NB), 0)
    with pytest.raises(SpaceError):
        instantiate(supernet(NB), 4, input_shape=(3, 10, 10))


def _full_darts(num_nodes, op="conv_1x1"):
    sp = darts_space(num_nodes)
    a = supernet(sp)
    for e in range(sp.num_edges):
        a = a.discretize(e, op)
    return a


def test_prune_two_input_node_unchanged():
    a = _full_darts(1)
    out, evals = topology_prune(a, lambda states: [0.0] * len(states), 0)
    assert out == a and evals == 0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=5, max_size=5, unique=True),
       st.integers(0, 100))
def test_prune_matches_subset_oracle(weights, seed):
    # additive score: the architecture is worth the sum of its kept edges,
    # so the best keep-2 subset per node is known by brute force
    a = _full_darts(2)
    sp = a.space

    def score(states):
        return [sum(weights[e] for e in range(sp.num_edges) if e not in s.pruned) for s in states]

    out, evals = topology_prune(a, score, seed)
    assert evals == 3
    for node in sp.nodes:
        ins = sp.in_edges(node)
        best = max(itertools.combinations(ins, 2), key=lambda c: sum(weights[e] for e in c))
        kept = tuple(e for e in ins if e not in out.pruned)
        assert kept == tuple(sorted(best))


def test_prune_four_node_cell_real_proxy():
    from zcpt.data import SynthDatasetCfg, synth_dataset
    from zcpt.proxies import compute_proxy_batched
    data = synth_dataset(SynthDatasetCfg(image_size=8, samples_per_class=16))
    a = _full_darts(4)

    def score(states):
        nets = [instantiate(s, 4, input_shape=data.input_shape) for s in states]
        return [s.value for s in compute_proxy_batched(nets, "nwot", 0, data, 16)]

    out, _ = topology_prune(a, score, 0)
    for node in out.space.nodes:
        assert len([e for e in out.space.in_edges(node) if e not in out.pruned]) == 2
    g = encode_genotype(out)
    assert parse_genotype(out.space, g) == out


def test_prune_rejects_fixed_topology():
    a = parse_genotype(NB, ARCH_0)
    with pytest.raises(SpaceError):
        topology_prune(a, lambda s: [0.0] * len(s), 0)
    with pytest.raises(SpaceError):
        a.prune(0)
