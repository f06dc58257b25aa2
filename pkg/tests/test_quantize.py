import numpy as np
import pytest
import torch

from scaleaudio.exceptions import ValidationError
from scaleaudio.pyramid import TokenPyramid
from scaleaudio.quantize import (
    Codebook,
    MultiScaleQuantizer,
    PhiUpsampler,
    interpolate_tokens,
    msrq_decode,
    msrq_encode,
    phi_apply,
    vq_lookup,
)
from scaleaudio.schedule import ScaleSchedule, make_schedule


def brute_force_nearest(x: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Independent exhaustive scan in float64 numpy."""
    out = np.empty(x.shape[0], dtype=np.int64)
    x64 = x.astype(np.float64)
    w64 = codebook.astype(np.float64)
    for i in range(x.shape[0]):
        d = ((x64[i] - w64) ** 2).sum(axis=1)
        out[i] = int(np.argmin(d))
    return out


def plain_rvq(f: np.ndarray, codebooks: list[np.ndarray]):
    """Classic residual VQ, written independently of the multi-scale path."""
    residual = f.copy()
    f_hat = np.zeros_like(f)
    indices = []
    for weight in codebooks:
        idx = brute_force_nearest(residual, weight)
        z = weight[idx]
        f_hat = f_hat + z
        residual = f - f_hat
        indices.append(idx)
    return indices, f_hat, residual


class TestVqLookup:
    def test_exact_row_match(self):
        torch.manual_seed(0)
        cb = Codebook(16, 4)
        x = cb.weight[7].unsqueeze(0).clone()
        idx, z = vq_lookup(x, cb)
        assert int(idx) == 7
        assert torch.equal(z[0], cb.weight[7])

    def test_four_row_example(self):
        cb = Codebook(4, 2)
        with torch.no_grad():
            cb.weight.copy_(torch.tensor([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
        idx, _ = vq_lookup(torch.tensor([[0.9, 0.1]]), cb)
        assert int(idx) == 1

    def test_tie_breaks_to_lower_index(self):
        cb = Codebook(8, 2)
        with torch.no_grad():
            cb.weight.zero_()
            cb.weight[2] = torch.tensor([1.0, 0.0])
            cb.weight[5] = torch.tensor([0.0, 1.0])
            # push the remaining zero rows far away
            for j in (0, 1, 3, 4, 6, 7):
                cb.weight[j] = torch.tensor([10.0, 10.0])
        idx, _ = vq_lookup(torch.tensor([[0.5, 0.5]]), cb)
        assert int(idx) == 2

    def test_agrees_with_exhaustive_scan(self):
        torch.manual_seed(3)
        cb = Codebook(128, 8)
        x = torch.randn(2000, 8)
        idx, z = vq_lookup(x, cb)
        expected = brute_force_nearest(x.numpy(), cb.weight.numpy())
        assert np.array_equal(idx.numpy(), expected)
        assert torch.equal(z, cb.weight[idx])

    def test_dim_mismatch(self):
        cb = Codebook(8, 4)
        with pytest.raises(ValidationError):
            vq_lookup(torch.zeros(3, 5), cb)


class TestInterpolate:
    def test_single_row_repeats(self):
        f = torch.tensor([[1.0, 2.0, 3.0]])
        out = interpolate_tokens(f, 5)
        assert out.shape == (5, 3)
        assert torch.equal(out, f.expand(5, 3))

    def test_identity_returns_input(self):
        f = torch.randn(7, 4)
        out = interpolate_tokens(f, 7)
        assert torch.equal(out, f)
        assert out.data_ptr() == f.data_ptr()  # no copy, same storage

    def test_linear_ramp_fixed_point(self):
        # linear functions survive down-then-up resampling under align-corners
        t = torch.linspace(0.0, 1.0, 31).unsqueeze(1).repeat(1, 3)
        down = interpolate_tokens(t, 11)
        up = interpolate_tokens(down, 31)
        assert torch.allclose(up, t, atol=1e-6)


class TestPhi:
    def test_gamma_zero_is_exact_identity(self):
        phi = PhiUpsampler(4, 8, gamma=0.0)
        z = torch.randn(10, 8)
        assert torch.equal(phi_apply(phi, 2, z), z)

    def test_identity_kernel_at_gamma_one(self):
        phi = PhiUpsampler(1, 4, gamma=1.0, grouping="fully_shared")
        with torch.no_grad():
            phi.convs[0].weight.zero_()
            for c in range(4):
                phi.convs[0].weight[c, c, 4] = 1.0
        z = torch.randn(12, 4)
        assert torch.allclose(phi_apply(phi, 1, z), z, atol=1e-7)

    def test_impulse_weight_two_at_half_gamma(self):
        phi = PhiUpsampler(1, 4, gamma=0.5, grouping="fully_shared")
        with torch.no_grad():
            phi.convs[0].weight.zero_()
            for c in range(4):
                phi.convs[0].weight[c, c, 4] = 2.0
        z = torch.randn(12, 4)
        assert torch.allclose(phi_apply(phi, 1, z), 1.5 * z, atol=1e-6)

    def test_grouping_assignment(self):
        phi = PhiUpsampler(7, 4, grouping="partially_shared", group_size=3)
        assert [phi.group_of(k) for k in range(1, 8)] == [0, 0, 0, 1, 1, 1, 2]
        assert len(phi.convs) == 3
        un = PhiUpsampler(5, 4, grouping="unshared")
        assert len(un.convs) == 5
        fs = PhiUpsampler(5, 4, grouping="fully_shared")
        assert len(fs.convs) == 1
        with pytest.raises(ValidationError):
            phi.group_of(8)


def all_top_quantizer(K=4, V=32, d=8, seed=0):
    torch.manual_seed(seed)
    schedule = make_schedule("explicit", lengths=[16] * K)
    return MultiScaleQuantizer(schedule, V, d, gamma=0.0)


class TestMsrq:
    def test_single_scale_equals_plain_lookup(self):
        torch.manual_seed(1)
        q = MultiScaleQuantizer(make_schedule("explicit", lengths=[16]), 32, 8, gamma=0.0)
        f = torch.randn(16, 8)
        pyramid, f_hat = msrq_encode(f, q)
        idx, z = vq_lookup(f, q.codebook_for(1))
        assert np.array_equal(pyramid.scales[0], idx.numpy())
        assert torch.equal(f_hat, z)

    def test_matches_plain_rvq_bitwise(self):
        q = all_top_quantizer(K=4)
        weights = [q.codebook_for(k).weight.numpy() for k in range(1, 5)]
        for trial in range(20):
            f = torch.randn(16, 8, generator=torch.Generator().manual_seed(trial))
            pyramid, f_hat = msrq_encode(f, q)
            idx_oracle, f_hat_oracle, _ = plain_rvq(f.numpy(), weights)
            for got, want in zip(pyramid.scales, idx_oracle):
                assert np.array_equal(got, want)
            assert np.array_equal(f_hat.numpy(), f_hat_oracle)

    def test_telescoping_is_exact(self):
        q = all_top_quantizer(K=5)
        f = torch.randn(1, 16, 8)
        f_hat, idx, x_list, z_list, residual = q.encode(f)
        total = torch.zeros_like(f)
        for z in z_list:
            total = total + z
        assert torch.equal(total, f_hat)
        assert torch.equal(residual, f - total)

    def test_decode_matches_encode_bitwise(self):
        torch.manual_seed(5)
        schedule = make_schedule("quadratic", K=5, top_length=24)
        q = MultiScaleQuantizer(schedule, 64, 8, gamma=0.5)
        f = torch.randn(24, 8)
        pyramid, f_hat = msrq_encode(f, q)
        assert torch.equal(msrq_decode(pyramid, q), f_hat)

    def test_zero_codebook_gives_zero_latent(self):
        q = all_top_quantizer(K=3)
        for k in range(1, 4):
            with torch.no_grad():
                q.codebook_for(k).weight.zero_()
        pyramid = TokenPyramid(
            scales=[np.random.default_rng(k).integers(0, 32, 16) for k in range(3)],
            schedule=q.schedule,
        )
        assert torch.equal(msrq_decode(pyramid, q), torch.zeros(16, 8))

    def test_single_scale_decode_is_gather(self):
        torch.manual_seed(2)
        q = MultiScaleQuantizer(make_schedule("explicit", lengths=[10]), 16, 4, gamma=0.0)
        idx = np.array([3, 1, 4, 1, 5, 9, 2, 6, 5, 3])
        pyramid = TokenPyramid(scales=[idx], schedule=q.schedule)
        assert torch.equal(msrq_decode(pyramid, q), q.codebook_for(1).weight[idx])

    def test_truncation_monotonicity_with_fitted_codebooks(self):
        # residual energy must not grow with quantizer depth once codebooks
        # reflect the data (per-stage k-means fit)
        from scipy.cluster.vq import kmeans2

        torch.manual_seed(9)
        K, V, d, l = 4, 32, 8, 16
        q = all_top_quantizer(K=K, V=V, d=d)
        rng = np.random.default_rng(0)
        data = rng.standard_normal((600, d)).astype(np.float32)
        residual = data.copy()
        for k in range(1, K + 1):
            centroids, labels = kmeans2(residual.astype(np.float64), V, minit="++", seed=4)
            with torch.no_grad():
                q.codebook_for(k).weight.copy_(torch.from_numpy(centroids).float())
            residual = residual - centroids[labels].astype(np.float32)

        errs = []
        latents = torch.from_numpy(rng.standard_normal((100, l, d)).astype(np.float32))
        for depth in (K - 1, K):
            trunc = MultiScaleQuantizer(
                make_schedule("explicit", lengths=[l] * depth), V, d, gamma=0.0)
            for k in range(1, depth + 1):
                with torch.no_grad():
                    trunc.codebook_for(k).weight.copy_(q.codebook_for(k).weight)
            total = 0.0
            for f in latents:
                _, f_hat = msrq_encode(f, trunc)
                total += float((f - f_hat).norm())
            errs.append(total)
        assert errs[1] <= errs[0]

    def test_decode_rejects_bad_indices(self):
        q = all_top_quantizer(K=2)
        pyramid = TokenPyramid(
            scales=[np.full(16, 40), np.zeros(16, dtype=np.int64)], schedule=q.schedule)
        with pytest.raises(ValidationError):
            msrq_decode(pyramid, q)

    def test_decode_rejects_schedule_mismatch(self):
        q = all_top_quantizer(K=2)
        other = make_schedule("explicit", lengths=[8, 16])
        pyramid = TokenPyramid(
            scales=[np.zeros(8, dtype=np.int64), np.zeros(16, dtype=np.int64)], schedule=other)
        with pytest.raises(ValidationError):
            msrq_decode(pyramid, q)


class TestStraightThrough:
    def test_gradient_flows_as_identity(self):
        # locally (no index flips), autograd through the straight-through path
        # must match central finite differences of the true loss
        torch.manual_seed(11)
        schedule = make_schedule("explicit", lengths=[3, 6])
        q = MultiScaleQuantizer(schedule, 16, 4, gamma=0.5).double()
        f = torch.randn(1, 6, 4, dtype=torch.float64, requires_grad=True)
        target = torch.randn(1, 6, 4, dtype=torch.float64)

        def loss_of(x):
            # requires_grad keeps the straight-through arithmetic active, so
            # finite differences probe the same function autograd sees
            x = x.detach().clone().requires_grad_(True)
            f_hat, *_ = q.encode(x)
            return ((f_hat - target) ** 2).sum()

        loss = loss_of(f)
        f2 = f.detach().clone().requires_grad_(True)
        f_hat, *_ = q.encode(f2)
        ((f_hat - target) ** 2).sum().backward()
        grad = f2.grad.clone()
        assert grad.abs().sum() > 0

        eps = 1e-4
        rng = np.random.default_rng(0)
        for _ in range(6):
            i = rng.integers(0, 6)
            j = rng.integers(0, 4)
            fp = f.detach().clone()
            fm = f.detach().clone()
            fp[0, i, j] += eps
            fm[0, i, j] -= eps
            fd = (float(loss_of(fp)) - float(loss_of(fm))) / (2 * eps)
            rel = abs(fd - float(grad[0, i, j])) / max(abs(fd), 1e-8)
            assert rel < 1e-3


class TestEmaCodebook:
    def test_ema_moves_toward_data(self):
        torch.manual_seed(0)
        cb = Codebook(4, 2, ema_decay=0.5)
        data = torch.tensor([[2.0, 2.0]]).repeat(64, 1)
        for _ in range(20):
            idx, _ = cb.lookup(data)
            cb.ema_update(data, idx)
        winner = int(cb.lookup(data[:1])[0])
        assert torch.allclose(cb.weight[winner], torch.tensor([2.0, 2.0]), atol=0.05)
        assert torch.isfinite(cb.weight).all()

    def test_dead_code_reseeding(self):
        torch.manual_seed(1)
        cb = Codebook(8, 2, dead_code_epochs=2)
        data = torch.zeros(16, 2)
        gen = torch.Generator().manual_seed(0)
        idx, _ = cb.lookup(data)
        cb.ema_update(data, idx)
        pool = torch.full((4, 2), 7.0)
        assert cb.end_epoch(pool, gen) == 0  # first unused epoch: nothing dead yet
        idx, _ = cb.lookup(data)
        cb.ema_update(data, idx)
        reseeded = cb.end_epoch(pool, gen)
        assert reseeded >= 6  # all never-used rows re-seeded from the pool
        assert (cb.weight == 7.0).all(dim=1).sum() >= reseeded

    def test_loss_mode_has_parameter_codebook(self):
        cb = Codebook(8, 2, update="loss")
        assert isinstance(cb.weight, torch.nn.Parameter)
        x = torch.randn(4, 2)
        idx, z = cb.lookup(x)
        loss = ((x.detach() - z) ** 2).sum()
        loss.backward()
        assert cb.weight.grad is not None
