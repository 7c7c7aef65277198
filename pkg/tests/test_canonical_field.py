import numpy as np
import pytest

from bodyspace import tape
from bodyspace.canonical_field import CanonicalNet, EmbeddingTables, lookup_embeddings, query_field
from bodyspace.geometry import Aabb
from helpers import check_grads

rng = np.random.default_rng(31)

BOX = Aabb(np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))


def small_net(seed=0, dtype=np.float64, width=16, bands=4, embed_dim=8):
    return CanonicalNet(np.random.default_rng(seed), BOX, width=width, depth=8,
                        skip_layer=5, bands=bands, embed_dim=embed_dim, dtype=dtype)


class TestQueryField:
    def test_zeroed_heads_give_transparent_gray(self):
        net = small_net()
        net.params["field.w_sigma"].data[:] = 0
        net.params["field.w_rgb"].data[:] = 0
        for _ in range(10):
            rgb, sigma = query_field(net, rng.uniform(-1, 1, 3), rng.standard_normal(8))
            assert sigma == 0.0
            assert np.allclose(rgb, 0.5)

    def test_single_neuron_matches_layerwise_oracle(self):
        # hand-set weights, evaluated by an explicit per-layer loop
        net = small_net(seed=1)
        x = np.array([0.3, -0.4, 0.2])
        emb = np.random.default_rng(5).standard_normal(8) * 0.5

        xn = (x - net.center) / net.half
        enc = np.zeros(net.enc_dim)
        col = 0
        for k in range(net.bands):
            for c in range(3):
                enc[col] = np.sin(2.0 ** k * np.pi * xn[c])
                enc[col + 1] = np.cos(2.0 ** k * np.pi * xn[c])
                col += 2
        h = np.maximum(enc @ net.params["field.w0"].data + emb @ net.params["field.we0"].data
                       + net.params["field.b0"].data, 0)
        for li in range(1, 8):
            z = h @ net.params[f"field.w{li}"].data + net.params[f"field.b{li}"].data
            if li == net.skip_layer - 1:
                z = z + enc @ net.params["field.wx_skip"].data + emb @ net.params["field.we_skip"].data
            h = np.maximum(z, 0)
        sigma_want = max(float(h @ net.params["field.w_sigma"].data[:, 0]
                               + net.params["field.b_sigma"].data[0]), 0.0)
        rgb_lin = h @ net.params["field.w_rgb"].data + net.params["field.b_rgb"].data
        rgb_want = 1.0 / (1.0 + np.exp(-rgb_lin))

        rgb, sigma = query_field(net, x, emb)
        assert abs(sigma - sigma_want) < 1e-6
        assert np.abs(rgb - rgb_want).max() < 1e-6

    def test_distinct_embeddings_change_output(self):
        net = small_net(seed=2)
        x = np.array([0.1, 0.2, -0.3])
        r1, s1 = query_field(net, x, np.full(8, 0.5))
        r2, s2 = query_field(net, x, np.full(8, -0.5))
        assert not (np.allclose(r1, r2) and abs(s1 - s2) < 1e-12)

    def test_output_ranges(self):
        net = small_net(seed=3)
        pts = rng.uniform(-1.5, 1.5, (200, 3))
        rgb, sigma = net.query(pts, rng.standard_normal(8))
        assert np.all(sigma >= 0)
        assert np.all(rgb > 0) and np.all(rgb < 1)

    def test_wrong_embedding_length_rejected(self):
        net = small_net(seed=4)
        with pytest.raises(ValueError):
            query_field(net, np.zeros(3), np.zeros(5))

    def test_gradients_match_fd_width16(self):
        # gradient contract: d(output)/d(everything) vs central differences on
        # a width-16 instance, float64
        net = small_net(seed=5)
        x = tape.parameter(rng.uniform(-0.5, 0.5, (4, 3)), name="x")
        emb = tape.parameter(rng.standard_normal(8) * 0.3, name="emb")
        cr = rng.standard_normal((4, 3))
        cs = rng.standard_normal(4)

        def loss():
            rgb, sigma = net.query_t(x, emb)
            return tape.add(tape.sum_(tape.mul(rgb, cr)), tape.sum_(tape.mul(sigma, cs)))

        check_grads(loss, net.param_list() + [x, emb])

    def test_gradients_at_float32(self):
        from helpers import check_grads_f32_against_f64

        net = small_net(seed=6, dtype=np.float32)
        x = tape.parameter(rng.uniform(-0.5, 0.5, (4, 3)).astype(np.float32), name="x")
        emb = tape.parameter((rng.standard_normal(8) * 0.3).astype(np.float32), name="emb")
        cr = rng.standard_normal((4, 3)).astype(np.float32)

        def loss():
            rgb, sigma = net.query_t(x, emb)
            return tape.add(tape.sum_(tape.mul(rgb, cr)), tape.sum_(sigma))

        check_grads_f32_against_f64(loss, net.param_list() + [x, emb])


class TestDensityVariants:
    def test_softplus_strictly_positive_with_live_grads(self):
        net = CanonicalNet(np.random.default_rng(8), BOX, width=16, depth=4, skip_layer=3,
                           bands=3, embed_dim=8, dtype=np.float64,
                           density_activation="softplus", density_scale=8.0)
        pts = rng.uniform(-1, 1, (20, 3))
        _, sigma = net.query(pts, np.zeros(8))
        assert np.all(sigma > 0)

        x = tape.parameter(rng.uniform(-0.5, 0.5, (3, 3)), name="x")

        def loss():
            c, s = net.query_t(x, tape.as_tensor(np.zeros(8)))
            return tape.add(tape.sum_(s), tape.sum_(c))

        check_grads(loss, net.param_list() + [x])

    def test_capsule_prior_biases_density_toward_bones(self):
        from bodyspace.canonical_field import capsule_density_prior
        from bodyspace.skeleton import SkeletonRig

        rig = SkeletonRig((None,), [[0.0, -0.4, 0.0]], [[0.0, 0.4, 0.0]], [0.2])
        prior = capsule_density_prior(rig, gain=2.0)
        on_axis = prior(np.array([[0.0, 0.0, 0.0]]))[0]
        surface = prior(np.array([[0.2, 0.0, 0.0]]))[0]
        far = prior(np.array([[0.9, 0.9, 0.9]]))[0]
        assert abs(on_axis - 2.0) < 1e-12
        assert abs(surface) < 1e-9
        assert far == -12.0  # clipped

        net = CanonicalNet(np.random.default_rng(9), BOX, width=16, depth=4, skip_layer=3,
                           bands=3, embed_dim=8, dtype=np.float64,
                           density_activation="softplus", density_scale=10.0,
                           density_prior=prior)
        net.params["field.w_sigma"].data[:] = 0  # head contributes nothing
        _, s_in = net.query(np.zeros((1, 3)), np.zeros(8))
        _, s_out = net.query(np.full((1, 3), 0.9), np.zeros(8))
        assert s_in[0] > 5.0  # softplus(2) * 10
        assert s_out[0] < 0.01

    def test_bad_activation_rejected(self):
        with pytest.raises(ValueError):
            CanonicalNet(np.random.default_rng(0), BOX, density_activation="gelu")


class TestEmbeddingTables:
    def test_lookup_returns_initialization(self):
        tables = EmbeddingTables(3, np.random.default_rng(7), app_dim=16, pose_dim=4)
        app, pose = lookup_embeddings(tables, 0, 0)
        assert np.array_equal(app, tables.app.data[0])
        assert np.array_equal(pose, tables.pose.data[0])

    def test_out_of_range_rejected(self):
        tables = EmbeddingTables(3, np.random.default_rng(8))
        with pytest.raises(IndexError):
            lookup_embeddings(tables, 3, 0)
        with pytest.raises(IndexError):
            lookup_embeddings(tables, -1, 0)

    def test_gradients_touch_only_used_rows(self):
        tables = EmbeddingTables(4, np.random.default_rng(9), app_dim=6, pose_dim=3, dtype=np.float64)
        app, pose = tables.lookup_t(2, 2)
        loss = tape.add(tape.sum_(tape.square(app)), tape.sum_(tape.square(pose)))
        tape.backward(loss)
        assert np.all(tables.app.grad[2] != 0)
        assert np.all(tables.app.grad[[0, 1, 3]] == 0)
        assert np.all(tables.pose.grad[[0, 1, 3]] == 0)

    def test_single_step_updates_only_used_row(self):
        # single-step optimizer oracle: hand Adam step on the gradient
        from bodyspace.optim import AdamState, ParamGroup, adam_step

        tables = EmbeddingTables(4, np.random.default_rng(10), app_dim=6, pose_dim=3)
        before = tables.app.data.copy()
        app, _ = tables.lookup_t(2, 0)
        tape.backward(tape.sum_(tape.square(app)))
        groups = [ParamGroup("embed", tables.param_list(), lr=1e-3)]
        state = AdamState()
        adam_step(groups, state)
        after = tables.app.data
        assert np.array_equal(after[[0, 1, 3]], before[[0, 1, 3]])
        assert not np.allclose(after[2], before[2])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            EmbeddingTables(0, np.random.default_rng(0))
