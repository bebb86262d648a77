"""
Tests for the H2SGNN model
"""

import math

import numpy as np
import pytest
import torch

from src.errors import ArgumentError, ShapeError
from src.filters import FilterBasis
from src.hetgraph import MetaPath, MetaPathSubgraph
from src.model import (
    DTYPE,
    GraphContext,
    H2SGNN,
    ModelConfig,
    ModelVariant,
    build_model,
    cross_entropy_loss,
    global_operator,
    gpr_coefficients,
    materialize_global,
    meta_path_importance,
)
from src.oracle import count_params
from src.sparse import CsrMatrix, add_scaled, spmm


def swap_context():
    """One meta-path whose adjacency swaps two nodes, identity features"""
    swap = CsrMatrix.from_dense([[0, 1], [1, 0]])
    sub = MetaPathSubgraph(path=MetaPath(name="S", relation_seq=["s"]), raw_adj=swap, norm_adj=swap)
    return GraphContext([sub], np.eye(2))


def config_for(context, **overrides):
    return ModelConfig(metapaths=context.metapath_names, **overrides)


class TestModelConfig:
    """Test architecture configuration"""

    def test_defaults(self):
        """Documented defaults"""
        config = ModelConfig()
        assert config.order == 10
        assert config.hidden_dim == 64
        assert config.num_mlp_layers == 2
        assert config.dropout == 0.5
        assert config.variant == ModelVariant.FULL
        assert config.local_basis.kind.value == "monomial"

    def test_unknown_key(self):
        """Typos are rejected"""
        with pytest.raises(ValueError):
            ModelConfig(hiden_dim=3)

    def test_per_metapath_bases(self):
        """A list of bases needs one entry per meta-path"""
        config = ModelConfig(metapaths=["A", "B"], local_basis=["legendre", {"kind": "jacobi", "a": 0.5}])
        assert [b.label() for b in config.local_bases()] == ["legendre", "jacobi(a=0.5,b=1)"]
        with pytest.raises(ArgumentError):
            ModelConfig(metapaths=["A"], local_basis=["legendre", "monomial"]).local_bases()

    def test_shared_basis(self):
        """A single basis is reused for every meta-path"""
        config = ModelConfig(metapaths=["A", "B", "C"], local_basis="legendre")
        assert len(config.local_bases()) == 3


class TestGraphContext:
    """Test graph context construction"""

    def test_dimensions(self, context_factory):
        """Nodes, features and names come from the subgraphs"""
        ctx, _ = context_factory(n=9, d=4, num_metapaths=3)
        assert (ctx.num_nodes, ctx.num_features) == (9, 4)
        assert ctx.metapath_names == ["P0", "P1", "P2"]
        assert ctx.x.dtype == DTYPE

    def test_feature_rows_checked(self):
        """Feature rows must match the subgraph size"""
        swap = CsrMatrix.from_dense([[0, 1], [1, 0]])
        sub = MetaPathSubgraph(path=MetaPath(name="S", relation_seq=["s"]), raw_adj=swap, norm_adj=swap)
        with pytest.raises(ShapeError):
            GraphContext([sub], np.ones((3, 2)))

    def test_needs_subgraphs(self):
        """An empty meta-path list is an error"""
        with pytest.raises(ArgumentError):
            GraphContext([], np.ones((2, 2)))

    def test_from_graph(self, author_paper_graph):
        """Subgraphs are induced from meta-paths"""
        ctx = GraphContext.from_graph(author_paper_graph, [MetaPath(name="AA", relation_seq=["knows"])])
        assert ctx.num_nodes == 2
        assert ctx.subgraphs[0].norm_adj.to_dense().tolist() == [[0, 1], [1, 0]]


class TestGlobalOperator:
    """Test the weighted-sum global operator"""

    def test_single_metapath(self):
        """R = 1 with beta = [1] is just the subgraph"""
        a = CsrMatrix.from_dense([[0, 0.5], [0.5, 0]])
        x = np.array([[1.0], [3.0]])
        assert global_operator([a], [1.0])(x).tolist() == spmm(a, x).tolist()

    def test_zero_weights(self):
        """beta = 0 gives the zero operator"""
        a = CsrMatrix.from_dense([[0, 1], [1, 0]])
        b = CsrMatrix.from_dense([[1, 0], [0, 1]])
        out = global_operator([a, b], [0.0, 0.0])(np.ones((2, 3)))
        assert np.all(out == 0)

    def test_matches_explicit_sum(self, context_factory):
        """Lazy application equals the materialized adjacency"""
        ctx, _ = context_factory(num_metapaths=3)
        beta = [0.2, -0.7, 1.3]
        x = np.random.default_rng(0).standard_normal((ctx.num_nodes, 2))
        lazy = global_operator(ctx.subgraphs, beta)(x)
        explicit = spmm(materialize_global(ctx.subgraphs, beta), x)
        np.testing.assert_allclose(lazy, explicit, atol=1e-12)

    def test_materialized_context(self, context_factory):
        """The explicit torch operator agrees with the lazy one"""
        lazy_ctx, _ = context_factory(num_metapaths=3, seed=4)
        mat_ctx, _ = context_factory(num_metapaths=3, seed=4, materialize_global=True)
        beta = torch.tensor([0.5, 1.5, -0.25], dtype=DTYPE)
        v = torch.randn(lazy_ctx.num_nodes, 3, dtype=DTYPE, generator=torch.Generator().manual_seed(0))
        torch.testing.assert_close(
            mat_ctx.global_operator(beta)(v), lazy_ctx.global_operator(beta)(v), atol=1e-12, rtol=0
        )

    def test_errors(self):
        """Weights must match the operators, which must share a shape"""
        with pytest.raises(ArgumentError):
            global_operator([CsrMatrix.identity(2)], [1.0, 2.0])
        with pytest.raises(ArgumentError):
            global_operator([], [])
        with pytest.raises(ShapeError):
            global_operator([CsrMatrix.identity(2), CsrMatrix.identity(3)], [1.0, 1.0])

    def test_materialize_global(self):
        """Explicit sum with beta weights"""
        ctx = swap_context()
        assert materialize_global(ctx.subgraphs, [2.0]) == add_scaled([ctx.subgraphs[0].norm_adj], [2.0])

    def test_meta_path_importance(self):
        """Absolute weights normalized to one"""
        assert meta_path_importance([1.0, -3.0]) == [0.25, 0.75]
        assert meta_path_importance([0.0, 0.0]) == [0.0, 0.0]


class TestInitialization:
    """Test parameter shapes and initial values"""

    def test_gpr_coefficients(self):
        """delta (1 - delta)^k with the residual on the last order"""
        np.testing.assert_allclose(gpr_coefficients(3, 0.5), [0.5, 0.25, 0.125, 0.125])
        assert gpr_coefficients(6, 0.3).sum() == pytest.approx(1.0)
        assert gpr_coefficients(0, 0.5).tolist() == [1.0]

    def test_shapes(self, context_factory):
        """alpha is R x (K+1), beta R, gamma K+1"""
        ctx, _ = context_factory(d=5, num_metapaths=3)
        model = H2SGNN(config_for(ctx, order=4, hidden_dim=7), num_features=5, num_classes=3)
        assert tuple(model.w.shape) == (5, 7)
        assert tuple(model.alpha.shape) == (3, 5)
        assert tuple(model.beta.shape) == (3,)
        assert tuple(model.gamma.shape) == (5,)
        assert all(p.dtype == DTYPE for p in model.parameters())

    def test_initial_coefficients(self, context_factory):
        """Every alpha row and gamma start from the GPR decay; beta is uniform"""
        ctx, _ = context_factory(num_metapaths=4)
        model = H2SGNN(config_for(ctx, order=3, init_delta=0.5), num_features=5, num_classes=3)
        coeffs = model.coefficients()
        assert coeffs["alpha"] == [[0.5, 0.25, 0.125, 0.125]] * 4
        assert coeffs["gamma"] == [0.5, 0.25, 0.125, 0.125]
        assert coeffs["beta"] == [0.25] * 4

    @pytest.mark.parametrize("variant,family", [("full", "full"), ("local_only", "local"), ("global_only", "global")])
    @pytest.mark.parametrize("R,K", [(1, 0), (2, 3), (3, 7)])
    def test_parameter_count_matches_formula(self, variant, family, R, K):
        """Trainable filter coefficients agree with the closed-form counts"""
        config = ModelConfig(metapaths=[f"P{i}" for i in range(R)], order=K, variant=variant)
        model = H2SGNN(config, num_features=3, num_classes=2)
        assert model.filter_parameter_count() == count_params(family, R, K)

    def test_variant_freezes_branches(self):
        """Unused branches do not train"""
        local = H2SGNN(ModelConfig(metapaths=["A"], variant="local_only"), 2, 2)
        assert local.alpha.requires_grad and not local.beta.requires_grad and not local.gamma.requires_grad
        glob = H2SGNN(ModelConfig(metapaths=["A"], variant="global_only"), 2, 2)
        assert not glob.alpha.requires_grad and glob.beta.requires_grad and glob.gamma.requires_grad

    def test_seeded_construction(self):
        """Same seed, same weights; different seed, different weights"""
        config = ModelConfig(metapaths=["A", "B"], order=2)
        a, b, c = build_model(config, 4, 3, seed=7), build_model(config, 4, 3, seed=7), build_model(config, 4, 3, seed=8)
        for name, t in a.state_dict().items():
            assert torch.equal(t, b.state_dict()[name])
        assert not torch.equal(a.w, c.w)

    def test_bad_dimensions(self):
        """Meta-paths, features and classes are all required"""
        with pytest.raises(ArgumentError):
            H2SGNN(ModelConfig(), 3, 2)
        with pytest.raises(ArgumentError):
            H2SGNN(ModelConfig(metapaths=["A"]), 3, 0)


class TestFiltering:
    """Test the local and global branches"""

    def test_local_order_zero_is_identity(self, context_factory):
        """K = 0, alpha = 1, W = I gives Z_l = X"""
        ctx, _ = context_factory(d=5, num_metapaths=1)
        model = H2SGNN(config_for(ctx, order=0, hidden_dim=5), 5, 3)
        with torch.no_grad():
            model.w.copy_(torch.eye(5, dtype=DTYPE))
            model.alpha.fill_(1.0)
            z, stacks = model.local_filtering(ctx, model.map_features(ctx.x))
        torch.testing.assert_close(z, ctx.x)
        assert len(stacks) == 1 and stacks[0].order == 0

    def test_local_one_hop(self):
        """alpha = [[0, 1]] on the swap graph swaps rows"""
        ctx = swap_context()
        model = H2SGNN(config_for(ctx, order=1, hidden_dim=2), 2, 2)
        with torch.no_grad():
            model.w.copy_(torch.eye(2, dtype=DTYPE))
            model.alpha.copy_(torch.tensor([[0.0, 1.0]], dtype=DTYPE))
            z, _ = model.local_filtering(ctx, model.map_features(ctx.x))
        assert z.tolist() == [[0.0, 1.0], [1.0, 0.0]]

    def test_global_order_zero_is_identity(self, context_factory):
        """K = 0, gamma = [1], W = I gives Z_g = X"""
        ctx, _ = context_factory(d=4, num_metapaths=2)
        model = H2SGNN(config_for(ctx, order=0, hidden_dim=4), 4, 3)
        with torch.no_grad():
            model.w.copy_(torch.eye(4, dtype=DTYPE))
            model.gamma.fill_(1.0)
            z, _ = model.global_filtering(ctx, model.map_features(ctx.x))
        torch.testing.assert_close(z, ctx.x)

    def test_global_zero_gamma(self, context_factory):
        """gamma = 0 gives the zero matrix"""
        ctx, _ = context_factory()
        model = H2SGNN(config_for(ctx, order=3), 5, 3)
        with torch.no_grad():
            model.gamma.zero_()
            z, _ = model.global_filtering(ctx, model.map_features(ctx.x))
        assert torch.count_nonzero(z) == 0


class TestForward:
    """Test full forward passes"""

    def test_full_sums_branches(self, context_factory):
        """Z = Z_l + Z_g and logits are n x C"""
        ctx, _ = context_factory(n=10, num_classes=4)
        model = build_model(config_for(ctx, order=3), ctx.num_features, 4)
        trace = model(ctx)
        torch.testing.assert_close(trace.z, trace.z_local + trace.z_global)
        assert tuple(trace.logits.shape) == (10, 4)
        assert trace.has_caches

    def test_local_only(self, context_factory):
        """The local-only variant never builds the global branch"""
        ctx, _ = context_factory()
        model = build_model(config_for(ctx, order=2, variant="local_only"), ctx.num_features, 3)
        trace = model(ctx)
        assert trace.z_global is None and trace.global_stack is None
        torch.testing.assert_close(trace.z, trace.z_local)

    def test_global_only(self, context_factory):
        """The global-only variant never builds the local branch"""
        ctx, _ = context_factory()
        model = build_model(config_for(ctx, order=2, variant="global_only"), ctx.num_features, 3)
        trace = model(ctx)
        assert trace.z_local is None and trace.local_stacks == []
        torch.testing.assert_close(trace.z, trace.z_global)

    def test_zero_head_gives_zero_logits(self, context_factory):
        """One zeroed linear layer outputs zeros"""
        ctx, _ = context_factory()
        model = build_model(config_for(ctx, num_mlp_layers=1), ctx.num_features, 3)
        with torch.no_grad():
            model.mlp[0].weight.zero_()
            model.mlp[0].bias.zero_()
        assert torch.count_nonzero(model(ctx).logits) == 0

    def test_eval_mode_is_deterministic(self, context_factory):
        """Without dropout two passes agree exactly"""
        ctx, _ = context_factory()
        model = build_model(config_for(ctx), ctx.num_features, 3)
        assert torch.equal(model(ctx).logits, model(ctx).logits)

    def test_no_grad_trace_has_no_caches(self, context_factory):
        """Inference traces cannot be differentiated"""
        ctx, _ = context_factory()
        model = build_model(config_for(ctx), ctx.num_features, 3)
        with torch.no_grad():
            assert not model(ctx).has_caches

    def test_context_mismatch(self, context_factory):
        """Features and meta-path counts must match the model"""
        ctx, _ = context_factory(d=5, num_metapaths=2)
        with pytest.raises(ShapeError):
            build_model(ModelConfig(metapaths=["P0", "P1"]), 4, 3)(ctx)
        with pytest.raises(ShapeError):
            build_model(ModelConfig(metapaths=["P0"]), 5, 3)(ctx)

    def test_mixed_bases(self, context_factory):
        """Each meta-path may use its own basis"""
        ctx, _ = context_factory(num_metapaths=3)
        config = config_for(ctx, order=4, local_basis=["monomial", "legendre", FilterBasis.jacobi(0.5, 0.5)])
        trace = build_model(config, ctx.num_features, 3)(ctx)
        assert torch.all(torch.isfinite(trace.logits))


class TestCrossEntropy:
    """Test the masked loss"""

    def test_uniform_logits(self):
        """Uniform logits over C classes cost ln C"""
        loss = cross_entropy_loss(torch.zeros(3, 4, dtype=DTYPE), [0, 1, 2], [0, 1, 2])
        assert float(loss) == pytest.approx(math.log(4))

    def test_confident_margin(self):
        """A margin of 100 on the true class costs nothing"""
        logits = torch.tensor([[100.0, 0.0], [0.0, 100.0]], dtype=DTYPE)
        assert float(cross_entropy_loss(logits, [0, 1], [0, 1])) == pytest.approx(0.0, abs=1e-12)

    def test_scalar_softmax(self):
        """[[1, 0]] with label 0 costs -log(e / (e + 1))"""
        loss = cross_entropy_loss(torch.tensor([[1.0, 0.0]], dtype=DTYPE), [0], [0])
        assert float(loss) == pytest.approx(0.3133, abs=1e-4)

    def test_mask_selects_nodes(self):
        """Only masked rows contribute"""
        logits = torch.tensor([[5.0, 0.0], [0.0, 0.0]], dtype=DTYPE)
        assert float(cross_entropy_loss(logits, [1, 0], [1])) == pytest.approx(math.log(2))

    def test_errors(self):
        """Empty masks and unlabeled nodes are rejected"""
        logits = torch.zeros(2, 2, dtype=DTYPE)
        with pytest.raises(ArgumentError):
            cross_entropy_loss(logits, [0, 1], [])
        with pytest.raises(ArgumentError):
            cross_entropy_loss(logits, [0, -1], [0, 1])


def permuted_context(context, perm):
    """Relabel target nodes so that new node j is old node perm[j]"""
    def relabel(m):
        return CsrMatrix.from_dense(m.to_dense()[np.ix_(perm, perm)])

    subgraphs = [
        MetaPathSubgraph(path=s.path, raw_adj=relabel(s.raw_adj), norm_adj=relabel(s.norm_adj))
        for s in context.subgraphs
    ]
    return GraphContext(subgraphs, context.x.numpy()[perm])


class TestInvariants:
    """Test structural properties of the filtered panels"""

    @pytest.mark.parametrize("seed", range(3))
    def test_permutation_equivariance(self, context_factory, seed):
        """Relabeling nodes permutes the rows of Z and the logits"""
        ctx, _ = context_factory(n=8, seed=seed)
        perm = np.random.default_rng(seed).permutation(8)
        model = build_model(config_for(ctx, order=3, hidden_dim=4, dropout=0.0), 5, 3, seed=seed)
        with torch.no_grad():
            base = model(ctx)
            moved = model(permuted_context(ctx, perm))
        torch.testing.assert_close(moved.z, base.z[perm], rtol=0, atol=1e-12)
        torch.testing.assert_close(moved.logits, base.logits[perm], rtol=0, atol=1e-12)

    def test_coefficient_scaling(self, context_factory):
        """Doubling alpha and gamma doubles Z exactly"""
        ctx, _ = context_factory()
        model = build_model(config_for(ctx, order=3, hidden_dim=4), 5, 3)
        with torch.no_grad():
            before = model(ctx).z
            model.alpha.mul_(2.0)
            model.gamma.mul_(2.0)
            after = model(ctx).z
        assert torch.equal(after, 2.0 * before)

    @pytest.mark.parametrize("c", [0.3, 2.0, 17.0])
    def test_argmax_survives_positive_scaling(self, context_factory, c):
        """With a single bias-free output layer, predictions do not move"""
        ctx, _ = context_factory()
        model = build_model(config_for(ctx, order=3, hidden_dim=4, num_mlp_layers=1, dropout=0.0), 5, 3)
        with torch.no_grad():
            model.mlp[0].bias.zero_()
            before = model(ctx).logits.argmax(dim=1)
            model.alpha.mul_(c)
            model.gamma.mul_(c)
            after = model(ctx)
        assert torch.equal(after.logits.argmax(dim=1), before)

    def test_zero_alpha_row_drops_metapath(self, context_factory):
        """Two meta-paths with the second alpha row zeroed match the first one alone"""
        pair, _ = context_factory(num_metapaths=2)
        single = GraphContext(pair.subgraphs[:1], pair.x.numpy())
        both = build_model(config_for(pair, order=3, hidden_dim=4, variant="local_only"), 5, 3, seed=4)
        one = build_model(config_for(single, order=3, hidden_dim=4, variant="local_only"), 5, 3)
        with torch.no_grad():
            both.alpha[1].zero_()
            one.w.copy_(both.w)
            one.alpha.copy_(both.alpha[:1])
        one.mlp.load_state_dict(both.mlp.state_dict())
        with torch.no_grad():
            lhs, rhs = both(pair), one(single)
        assert torch.equal(lhs.z_local, rhs.z_local)
        assert torch.equal(lhs.logits, rhs.logits)

    def test_second_order_global_term(self, context_factory):
        """The k=2 monomial term expands into all four ordered products"""
        ctx, _ = context_factory(n=10, num_metapaths=2)
        model = build_model(config_for(ctx, order=2, hidden_dim=4), 5, 3)
        with torch.no_grad():
            model.beta.copy_(torch.tensor([0.7, -0.4], dtype=DTYPE))
            trace = model(ctx)
        b1, b2 = 0.7, -0.4
        a1, a2 = (s.norm_adj.to_dense() for s in ctx.subgraphs)
        xw = trace.xw.numpy()
        expected = (
            b1 * b1 * a1 @ a1 @ xw
            + b1 * b2 * a1 @ a2 @ xw
            + b2 * b1 * a2 @ a1 @ xw
            + b2 * b2 * a2 @ a2 @ xw
        )
        np.testing.assert_allclose(trace.global_stack.terms[2].numpy(), expected, rtol=1e-12, atol=1e-12)
