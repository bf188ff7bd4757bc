import math

import numpy as np
import pytest

from tstransfer import tensor as T
from tstransfer.checkpoint import (
    checkpoint_size,
    load_checkpoint,
    save_checkpoint,
)
from tstransfer.errors import CheckpointFormatError, ContractError, ShapeError
from tstransfer.model import (
    ModelConfig,
    decode,
    encode,
    forward,
    init_random,
    param_count,
    param_shapes,
    relative_position_buckets,
    tier_config,
    validate_params,
)
from tstransfer.tensor import Tensor, grad_check, no_grad


def micro_config(**kw):
    base = dict(
        d_model=16,
        n_layers_enc=1,
        n_layers_dec=1,
        n_heads=2,
        d_ff=32,
        vocab_size=160,
        rel_pos_buckets=8,
        rel_pos_max_distance=16,
        tier_name="micro",
    )
    base.update(kw)
    return ModelConfig(**base)


class TestInit:
    def test_deterministic(self):
        cfg = micro_config()
        a = init_random(cfg, 7)
        b = init_random(cfg, 7)
        assert a.keys() == b.keys()
        for k in a:
            np.testing.assert_array_equal(a[k].data, b[k].data)

    def test_different_seeds_differ(self):
        cfg = micro_config()
        a = init_random(cfg, 0)
        b = init_random(cfg, 1)
        assert any(not np.array_equal(a[k].data, b[k].data) for k in a)

    def test_sample_std_near_target(self):
        cfg = tier_config("tiny")
        params = init_random(cfg, 3)
        targets = {
            "embed.tokens": cfg.d_model**-0.5,
            "head.w": cfg.d_model**-0.5,
            "encoder.block0.attn.q": cfg.d_model**-0.5,  # fan-in = d_model
            "encoder.block0.ff.wi": cfg.d_model**-0.5,
            "encoder.block0.ff.wo": cfg.d_ff**-0.5,
        }
        for name, target in targets.items():
            tensor = params[name]
            assert tensor.size >= 4096
            sample = float(tensor.data.std())
            assert abs(sample - target) <= 0.2 * target, (name, sample, target)

    def test_invalid_heads(self):
        with pytest.raises(ContractError):
            micro_config(d_model=10, n_heads=4)


class TestParamCount:
    def test_zero_layer_config(self):
        cfg = micro_config(n_layers_enc=0, n_layers_dec=0)
        v, d = cfg.vocab_size, cfg.d_model
        # embedding + head + the two final norms only
        assert param_count(cfg) == 2 * v * d + 2 * d

    def test_tiny_tier_closed_form(self):
        cfg = tier_config("tiny")
        d, ff, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
        enc_layer = 4 * d * d + 2 * d * ff + 2 * d
        dec_layer = 8 * d * d + 2 * d * ff + 3 * d
        expected = (
            2 * v * d
            + cfg.n_layers_enc * enc_layer
            + cfg.n_layers_dec * dec_layer
            + 2 * cfg.rel_pos_buckets * cfg.n_heads
            + 2 * d
        )
        assert param_count(cfg) == expected

    def test_dff_doubling_delta(self):
        cfg = micro_config()
        cfg2 = micro_config(d_ff=2 * cfg.d_ff)
        n_layers = cfg.n_layers_enc + cfg.n_layers_dec
        assert param_count(cfg2) - param_count(cfg) == n_layers * 2 * cfg.d_model * cfg.d_ff

    def test_count_matches_initialized_params(self):
        cfg = micro_config()
        params = init_random(cfg, 0)
        assert sum(p.size for p in params.values()) == param_count(cfg)


class TestBuckets:
    def test_small_offsets_exact(self):
        b = relative_position_buckets(4, 4, n_buckets=8, max_distance=16, bidirectional=True)
        # rel = key - query; half the buckets for keys after the query
        assert b[0, 0] == 0
        assert b[1, 0] == 1  # rel = -1
        assert b[0, 1] == 5  # rel = +1 -> 4 + 1
        assert b[2, 2] == 0

    def test_causal_buckets_monotone_in_distance(self):
        b = relative_position_buckets(32, 32, n_buckets=8, max_distance=16, bidirectional=False)
        row = b[-1]  # distances 31 .. 0
        assert (np.diff(row) <= 0).all()
        assert b.max() < 8 and b.min() >= 0

    def test_beyond_max_distance_shares_last_bucket(self):
        b = relative_position_buckets(64, 64, n_buckets=8, max_distance=16, bidirectional=False)
        assert b[63, 0] == b[40, 0] == 7


class TestForward:
    def test_output_shape(self, rng):
        cfg = micro_config()
        params = init_random(cfg, 0)
        enc = Tensor(rng.standard_normal((2, 5, cfg.d_model)).astype(np.float32))
        dec = Tensor(rng.standard_normal((2, 3, cfg.d_model)).astype(np.float32))
        out = forward(params, cfg, enc, dec)
        assert out.shape == (2, 3, cfg.d_model)

    def test_shape_validation(self, rng):
        cfg = micro_config()
        params = init_random(cfg, 0)
        bad = Tensor(rng.standard_normal((2, 5, cfg.d_model + 1)).astype(np.float32))
        with pytest.raises(ShapeError):
            encode(params, cfg, bad)

    def test_causality_exact(self, rng):
        cfg = micro_config(n_layers_dec=2)
        params = init_random(cfg, 1)
        enc = Tensor(rng.standard_normal((1, 4, cfg.d_model)).astype(np.float32))
        dec_a = rng.standard_normal((1, 6, cfg.d_model)).astype(np.float32)
        dec_b = dec_a.copy()
        u0 = 3
        dec_b[:, u0 + 1 :] += 5.0  # perturb strictly after u0
        with no_grad():
            out_a = forward(params, cfg, enc, Tensor(dec_a)).data
            out_b = forward(params, cfg, enc, Tensor(dec_b)).data
        np.testing.assert_array_equal(out_a[:, : u0 + 1], out_b[:, : u0 + 1])
        assert not np.array_equal(out_a[:, u0 + 1 :], out_b[:, u0 + 1 :])

    def test_batch_equivariance(self, rng):
        cfg = micro_config()
        params = init_random(cfg, 2)
        enc = rng.standard_normal((3, 4, cfg.d_model)).astype(np.float32)
        dec = rng.standard_normal((3, 2, cfg.d_model)).astype(np.float32)
        perm = np.array([2, 0, 1])
        with no_grad():
            out = forward(params, cfg, Tensor(enc), Tensor(dec)).data
            out_p = forward(params, cfg, Tensor(enc[perm]), Tensor(dec[perm])).data
        np.testing.assert_array_equal(out[perm], out_p)

    def test_one_layer_one_head_matches_manual_recomputation(self, rng):
        cfg = micro_config(n_heads=1)
        params = init_random(cfg, 5)
        enc_x = rng.standard_normal((3, cfg.d_model)).astype(np.float32)
        dec_x = rng.standard_normal((3, cfg.d_model)).astype(np.float32)
        with no_grad():
            got = forward(
                params, cfg, Tensor(enc_x[None]), Tensor(dec_x[None])
            ).data[0]
        want = _manual_one_layer(params, cfg, enc_x.astype(np.float64), dec_x.astype(np.float64))
        np.testing.assert_allclose(got, want, atol=1e-5)

    def test_grad_check_one_layer_model(self, rng):
        cfg = micro_config()
        params = init_random(cfg, 4)
        enc_x = rng.standard_normal((1, 3, cfg.d_model)).astype(np.float32)
        dec_x = rng.standard_normal((1, 2, cfg.d_model)).astype(np.float32)
        targets = np.array([3, 7])

        def loss_wrt_enc(x):
            hidden = forward(params, cfg, x, Tensor(dec_x.astype(x.data.dtype)))
            logits = T.matmul(hidden, T.transpose(params["head.w"], (1, 0)))
            return T.cross_entropy(T.reshape(logits, (2, cfg.vocab_size)), targets)

        def loss_wrt_weight(w):
            p2 = dict(params)
            p2["decoder.block0.attn.q"] = w
            hidden = forward(p2, cfg, Tensor(enc_x.astype(w.data.dtype)), Tensor(dec_x.astype(w.data.dtype)))
            logits = T.matmul(hidden, T.transpose(p2["head.w"], (1, 0)))
            return T.cross_entropy(T.reshape(logits, (2, cfg.vocab_size)), targets)

        r = grad_check(loss_wrt_enc, Tensor(enc_x), h=1e-3, tol=1e-3)
        assert r.passed, f"enc input: {r}"
        r = grad_check(loss_wrt_weight, Tensor(params["decoder.block0.attn.q"].data), h=1e-3, tol=1e-3)
        assert r.passed, f"attn weight: {r}"


def _softmax64(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def _manual_one_layer(params, cfg, enc_x, dec_x):
    """Step-by-step float64 recomputation of the 1-layer, 1-head model."""
    d = cfg.d_model

    def rms(x, gain):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            out[i] = gain * x[i] / math.sqrt((x[i] ** 2).mean() + 1e-6)
        return out

    def attention(prefix, q_in, kv_in, bias=None, causal=False):
        wq = params[f"{prefix}.q"].data.astype(np.float64)
        wk = params[f"{prefix}.k"].data.astype(np.float64)
        wv = params[f"{prefix}.v"].data.astype(np.float64)
        wo = params[f"{prefix}.o"].data.astype(np.float64)
        q, k, v = q_in @ wq, kv_in @ wk, kv_in @ wv
        out = np.zeros_like(q_in)
        for i in range(q_in.shape[0]):
            scores = np.empty(kv_in.shape[0])
            for j in range(kv_in.shape[0]):
                scores[j] = float(q[i] @ k[j]) / math.sqrt(d)  # d_head == d for 1 head
                if bias is not None:
                    scores[j] += bias[i, j]
                if causal and j > i:
                    scores[j] = -1e9
            p = _softmax64(scores)
            ctx = sum(p[j] * v[j] for j in range(kv_in.shape[0]))
            out[i] = ctx @ wo
        return out

    def ff(prefix, x):
        wi = params[f"{prefix}.wi"].data.astype(np.float64)
        wo = params[f"{prefix}.wo"].data.astype(np.float64)
        return np.maximum(x @ wi, 0.0) @ wo

    def bias_matrix(table_name, q_len, k_len, bidirectional):
        table = params[table_name].data.astype(np.float64)
        buckets = relative_position_buckets(
            q_len, k_len, cfg.rel_pos_buckets, cfg.rel_pos_max_distance, bidirectional
        )
        return table[buckets][:, :, 0]  # single head

    g = lambda n: params[n].data.astype(np.float64)

    h = enc_x
    eb = bias_matrix("encoder.rel_bias", 3, 3, True)
    h = h + attention("encoder.block0.attn", rms(h, g("encoder.block0.attn_norm.gain")),
                      rms(h, g("encoder.block0.attn_norm.gain")), bias=eb)
    h = h + ff("encoder.block0.ff", rms(h, g("encoder.block0.ff_norm.gain")))
    enc_out = rms(h, g("encoder.final_norm.gain"))

    h = dec_x
    db = bias_matrix("decoder.rel_bias", 3, 3, False)
    h = h + attention("decoder.block0.attn", rms(h, g("decoder.block0.attn_norm.gain")),
                      rms(h, g("decoder.block0.attn_norm.gain")), bias=db, causal=True)
    h = h + attention("decoder.block0.cross", rms(h, g("decoder.block0.cross_norm.gain")), enc_out)
    h = h + ff("decoder.block0.ff", rms(h, g("decoder.block0.ff_norm.gain")))
    return rms(h, g("decoder.final_norm.gain"))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        cfg = micro_config()
        params = init_random(cfg, 9)
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert list(loaded.keys()) == list(params.keys())
        for k in params:
            np.testing.assert_array_equal(loaded[k].data, params[k].data)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        cfg = micro_config()
        save_checkpoint(init_random(cfg, 0), path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "trunc.ckpt"
        save_checkpoint(init_random(micro_config(), 0), path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointFormatError, match="truncated"):
            load_checkpoint(path)

    def test_file_size_formula(self, tmp_path):
        cfg = micro_config()
        params = init_random(cfg, 0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, path)
        expected = 12 + sum(
            2 + len(name.encode()) + 1 + 8 * p.ndim + 4 * p.size for name, p in params.items()
        )
        assert path.stat().st_size == expected == checkpoint_size(params)

    def test_unknown_tensor_name_on_mismatched_config(self, tmp_path):
        params = init_random(micro_config(), 0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        with pytest.raises(ContractError, match="unknown tensor|missing tensor"):
            validate_params(loaded, micro_config(n_layers_enc=2))

    def test_validate_params_accepts_matching(self):
        cfg = micro_config()
        validate_params(init_random(cfg, 0), cfg)

    def test_shapes_are_pure_function_of_config(self):
        a = param_shapes(micro_config())
        b = param_shapes(micro_config())
        assert a == b
