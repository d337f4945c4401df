import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dynshuffle.autograd as ag
from dynshuffle.autograd import Tape, Tensor, backward, binarize_ste
from dynshuffle.errors import ConfigurationError, DimensionError, UsageError
from dynshuffle.permutation import build_manual_shuffle
from dynshuffle.shuffle import (PUBLISHED_AUX, AuxNetConfig, aux_forward, compose,
                                derive_aux_config, derive_expansion_config,
                                dynshuffle_forward, init_aux_state,
                                init_free_state, orth_reg, rect_reg,
                                stacked_identity, static_dynamic_forward,
                                published_aux_config)


def feats(rng, n, c, hw=4):
    return Tensor(rng.normal(size=(n, c, hw, hw)).astype(np.float32))


class TestBinarizeSTE:
    def test_forward_argmax(self):
        out = binarize_ste(Tensor(np.array([[0.1, 0.7, 0.2]], dtype=np.float32)))
        assert out.data.tolist() == [[0.0, 1.0, 0.0]]

    def test_one_hot_idempotent(self):
        x = np.eye(4, dtype=np.float32)
        assert np.array_equal(binarize_ste(Tensor(x)).data, x)

    def test_tie_breaks_to_lowest_index(self):
        out = binarize_ste(Tensor(np.array([[0.5, 0.5, 0.1]], dtype=np.float32)))
        assert out.data.argmax() == 0

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=40, deadline=None)
    def test_mask_rule_exact(self, seed):
        r = np.random.default_rng(seed)
        x = Tensor(r.normal(size=(4, 5)).astype(np.float32), requires_grad=True)
        g = r.normal(size=(4, 5)).astype(np.float32)
        with Tape() as tape:
            y = binarize_ste(x)
            loss = ag.sum_all(ag.mul(y, Tensor(g)))
        backward(loss, tape)
        assert np.array_equal(x.grad, g * y.data)


class TestRegularizers:
    def test_orth_identity_zero(self):
        assert float(orth_reg(Tensor(np.eye(5, dtype=np.float32))).data) == 0.0

    def test_orth_any_permutation_zero(self, rng):
        from dynshuffle.permutation import PermutationMatrix
        p = PermutationMatrix(rng.permutation(6)).dense()
        assert float(orth_reg(Tensor(p)).data) == 0.0

    def test_orth_uniform_half(self):
        out = orth_reg(Tensor(np.full((2, 2), 0.5, dtype=np.float32)))
        assert np.isclose(float(out.data), 1.0, atol=1e-6)

    def test_orth_rejects_rect(self):
        with pytest.raises(UsageError):
            orth_reg(Tensor(np.zeros((2, 3), dtype=np.float32)))

    def test_rect_one_hot_zero(self, rng):
        m = np.zeros((4, 6), dtype=np.float32)
        m[np.arange(4), rng.integers(0, 6, 4)] = 1
        assert float(rect_reg(Tensor(m)).data) == 0.0

    def test_rect_quarter_row(self):
        out = rect_reg(Tensor(np.full((1, 4), 0.25, dtype=np.float32)))
        assert np.isclose(float(out.data), 0.5, atol=1e-6)

    def test_rect_two_quarter_rows(self):
        out = rect_reg(Tensor(np.full((2, 4), 0.25, dtype=np.float32)))
        assert np.isclose(float(out.data), np.sqrt(0.5), atol=1e-6)

    def test_reg_gradients_match_finite_differences(self, rng):
        from dynshuffle.autograd import finite_diff_check
        err1 = finite_diff_check(lambda x: orth_reg(ag.row_softmax(x)),
                                 Tensor(rng.normal(size=(4, 4)).astype(np.float32)),
                                 eps=1e-4)
        err2 = finite_diff_check(lambda x: rect_reg(ag.row_softmax(x)),
                                 Tensor(rng.normal(size=(4, 6)).astype(np.float32)),
                                 eps=1e-4)
        assert err1 < 1e-4 and err2 < 1e-4


class TestPublishedAuxConfigs:
    def test_all_rows_validate(self):
        assert len(PUBLISHED_AUX) == 12
        for cfg in PUBLISHED_AUX.values():
            cfg.validate()

    def test_v1_g3_stage2_shapes(self, rng):
        cfg = published_aux_config("v1", "g3", 2)
        assert (cfg.m1_size, cfg.m2_rows, cfg.m2_cols) == (4, 5, 5)
        assert cfg.conv_out_len == 5
        state = init_aux_state(cfg, rng)
        m1, m2 = aux_forward(Tensor(rng.normal(size=(3, 60)).astype(np.float32)),
                             state, cfg)
        assert m1.shape == (3, 4, 4) and m2.shape == (3, 5, 5)
        assert np.allclose(m1.data.sum(axis=-1), 1.0, atol=1e-6)
        assert np.allclose(m2.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_v1_g3_stage4_lout_20(self):
        cfg = published_aux_config("v1", "g3", 4)
        assert cfg.conv_out_len == 20
        assert (cfg.m2_rows, cfg.m2_cols) == (20, 20)
        assert cfg.m1_size == 4

    def test_v1_rows_cover_exactly(self):
        for variant, g in (("g3", 3), ("g8", 8)):
            for stage in (2, 3, 4):
                cfg = published_aux_config("v1", variant, stage)
                assert cfg.groups == g
                assert cfg.composed_rows == cfg.channels
                assert not cfg.needs_clip

    def test_v2_stage2_clips_60_to_58(self):
        cfg = published_aux_config("v2", "1x", 2)
        assert cfg.block_rows == 60 and cfg.clip_target == 58
        assert cfg.needs_clip

    def test_v2_stage4_documented_ambiguity(self):
        cfg = published_aux_config("v2", "1x", 4)
        assert cfg.ambiguous
        assert cfg.conv_channels * cfg.conv_out_len == 1800
        assert (cfg.m2_rows, cfg.m2_cols) == (40, 45)
        assert (cfg.composed_rows, cfg.composed_cols) == (240, 270)
        assert cfg.clip_target == 232

    def test_stage2_mac_arithmetic(self):
        # 60·5 + 5·16 = 380, 60·5 + 5·20 = 400, 6·5·5 = 150 → 930
        assert published_aux_config("v1", "g3", 2).mac_count() == 930

    def test_bad_branch_dims_rejected(self):
        with pytest.raises(ConfigurationError):
            AuxNetConfig(channels=60, groups=3, m1_size=4, m2_rows=5, m2_cols=5,
                         mlp1_hidden=5, mlp2_hidden=5, mlp2_out=20,
                         conv_kernel=6, conv_channels=5, conv_stride=3, conv_pad=1)

    def test_coverage_shortfall_rejected(self):
        with pytest.raises(ConfigurationError):
            AuxNetConfig(channels=64, groups=2, m1_size=2, m2_rows=2, m2_cols=2,
                         mlp1_hidden=4, mlp2_hidden=4, mlp2_out=3,
                         conv_kernel=3, conv_channels=2, conv_stride=2, conv_pad=1)


class TestCompose:
    def test_identity_factors_give_identity(self):
        m1 = np.eye(2, dtype=np.float32)
        m2 = np.eye(3, dtype=np.float32)
        s = build_manual_shuffle(1, 6)
        out = compose(m1, m2, 1, s, 6)
        assert np.array_equal(out, np.eye(6, dtype=np.float32))

    def test_matches_dense_matmul_chain(self, rng):
        # S · (I_g ⊗ (M1 ⊗ M2)) computed densely must equal the index path
        for _ in range(30):
            g = int(rng.integers(1, 4))
            r1 = int(rng.integers(1, 4))
            r2 = int(rng.integers(1, 4))
            c = g * r1 * r2
            m1 = np.zeros((r1, r1), dtype=np.float32)
            m1[np.arange(r1), rng.integers(0, r1, r1)] = 1
            m2 = np.zeros((r2, r2), dtype=np.float32)
            m2[np.arange(r2), rng.integers(0, r2, r2)] = 1
            s = build_manual_shuffle(g, c)
            ref = s.dense() @ np.kron(np.eye(g, dtype=np.float32), np.kron(m1, m2))
            assert np.array_equal(compose(m1, m2, g, s, c), ref)

    def test_spec_example_g2(self):
        m1 = np.eye(1, dtype=np.float32)
        swap = np.array([[0, 1], [1, 0]], dtype=np.float32)
        s = build_manual_shuffle(2, 4)
        ref = s.dense() @ np.kron(np.eye(2, dtype=np.float32),
                                  np.kron(m1, swap))
        assert np.array_equal(compose(m1, swap, 2, s, 4), ref)

    def test_v1_g3_stage2_dims(self, rng):
        cfg = published_aux_config("v1", "g3", 2)
        state = init_aux_state(cfg, rng)
        f = feats(rng, 2, 60)
        _, _, out = dynshuffle_forward(f, state, cfg, want_output=True)
        assert out.composed.shape == (2, 60, 60)
        assert out.m1_bin.shape == (2, 4, 4) and out.m2_bin.shape == (2, 5, 5)

    def test_v2_stage2_clip_to_58(self, rng):
        cfg = published_aux_config("v2", "1x", 2)
        state = init_aux_state(cfg, rng)
        f = feats(rng, 2, 58)
        _, _, out = dynshuffle_forward(f, state, cfg, want_output=True)
        assert out.composed.shape == (2, 58, 58)
        assert np.array_equal(out.composed.sum(axis=2),
                              np.ones((2, 58), dtype=np.float32))

    def test_coverage_shortfall_rejected(self):
        with pytest.raises(ConfigurationError):
            compose(np.eye(2, dtype=np.float32), np.eye(2, dtype=np.float32),
                    1, build_manual_shuffle(1, 6), 6)


class TestDynShuffleForward:
    def test_identity_aux_recovers_manual_shuffle(self, rng):
        cfg = derive_aux_config(12, 3)
        state = init_aux_state(cfg, rng)
        # silence the data-dependent heads: branches emit the prior exactly
        state.w1b.data[:] = 0
        state.conv_w.data[:] = 0
        f = feats(rng, 3, 12)
        out, _, _ = dynshuffle_forward(f, state, cfg)
        from dynshuffle.permutation import apply_shift
        ref = apply_shift(build_manual_shuffle(3, 12), f.data)
        assert np.array_equal(out.data, ref)

    def test_channel_multiset_preserved(self, rng):
        cfg = derive_aux_config(12, 2)
        for trial in range(10):
            r = np.random.default_rng(trial)
            state = init_aux_state(cfg, r,
                                   m1_pattern=r.permutation(cfg.m1_size),
                                   m2_pattern=r.permutation(cfg.m2_rows))
            f = feats(r, 4, 12)
            out, _, _ = dynshuffle_forward(f, state, cfg)
            assert np.array_equal(np.sort(out.data, axis=1), np.sort(f.data, axis=1))

    def test_taped_path_equals_index_path_bitwise(self, rng):
        cfg = published_aux_config("v1", "g8", 2)
        state = init_aux_state(cfg, rng)
        f = feats(rng, 3, 96)
        plain, _, o1 = dynshuffle_forward(f, state, cfg, want_output=True)
        with Tape():
            taped, _, o2 = dynshuffle_forward(f, state, cfg, want_output=True)
        assert np.array_equal(plain.data, taped.data)
        assert np.array_equal(o1.composed, o2.composed)

    def test_gradients_reach_every_aux_parameter(self, rng):
        cfg = derive_aux_config(8, 2)
        state = init_aux_state(cfg, rng)
        f = feats(rng, 2, 8)
        with Tape() as tape:
            out, reg, _ = dynshuffle_forward(f, state, cfg, training=True)
            loss = ag.add(ag.sum_all(ag.mul(out, out)), reg)
        backward(loss, tape)
        for name, p in state.named_params().items():
            assert p.grad is not None, name

    def test_per_sample_matrices_can_differ(self, rng):
        cfg = derive_aux_config(12, 2)
        state = init_aux_state(cfg, rng)
        # push the heads hard so pooled differences flip argmaxes
        state.w1b.data[:] = rng.normal(0, 3.0, state.w1b.shape)
        state.w2b.data[:] = rng.normal(0, 3.0, state.w2b.shape)
        state.bn_scale.data[:] = 3.0
        f = feats(rng, 16, 12)
        _, _, out = dynshuffle_forward(f, state, cfg, training=True,
                                       want_output=True)
        assert any(not np.array_equal(out.composed[0], out.composed[i])
                   for i in range(1, 16))

    def test_no_binarize_is_dense_soft_mixing(self, rng):
        cfg = derive_aux_config(8, 2)
        state = init_aux_state(cfg, rng)
        f = feats(rng, 2, 8)
        out, _, _ = dynshuffle_forward(f, state, cfg, binarize=False)
        m1, m2 = aux_forward(ag.global_avg_pool(f), state, cfg)
        soft = ag.kron_batched(m1, m2)
        block = ag.kron_batched(Tensor(np.eye(2, dtype=np.float32)), soft)
        s = build_manual_shuffle(2, 8)
        ref = np.matmul(block.data[:, s.map, :], f.data.reshape(2, 8, -1))
        assert np.allclose(out.data.reshape(2, 8, -1), ref, atol=1e-6)

    def test_free_matrix_state_shared_across_batch(self, rng):
        cfg = derive_aux_config(8, 2)
        state = init_free_state(cfg, rng)
        f = feats(rng, 5, 8)
        _, _, out = dynshuffle_forward(f, state, cfg, want_output=True)
        for i in range(1, 5):
            assert np.array_equal(out.composed[0], out.composed[i])

    def test_wrong_channels_rejected(self, rng):
        cfg = derive_aux_config(8, 2)
        state = init_aux_state(cfg, rng)
        with pytest.raises(DimensionError):
            dynshuffle_forward(feats(rng, 1, 9), state, cfg)


class TestStaticDynamic:
    def test_duplication_baseline(self, rng):
        # stacked-identity static matrix with a silenced dynamic part
        cfg = derive_expansion_config(4, 8)
        state = init_aux_state(cfg, rng)
        f = feats(rng, 2, 4)
        static = Tensor(stacked_identity(8, 4), requires_grad=True)
        out, reg, extra = static_dynamic_forward(f, static, state, cfg,
                                                 want_output=True)
        dyn = extra.composed[0]
        ref = np.matmul(static.data + dyn, f.data.reshape(2, 4, -1))
        assert np.allclose(out.data.reshape(2, 8, -1), ref, atol=1e-6)

    def test_square_reduction_matches_dynshuffle_semantics(self, rng):
        cfg = derive_aux_config(8, 1)
        state = init_aux_state(cfg, rng)
        f = feats(rng, 2, 8)
        out_sd, _, _ = static_dynamic_forward(f, None, state, cfg)
        out_ds, _, _ = dynshuffle_forward(f, state, cfg)
        # g=1 means S is the identity; both paths apply the same matrix
        assert np.array_equal(out_sd.data, out_ds.data)

    def test_each_output_selects_one_input_plus_blend(self, rng):
        cfg = derive_expansion_config(4, 8)
        state = init_aux_state(cfg, rng)
        static = Tensor(rng.normal(0, 0.1, (8, 4)).astype(np.float32),
                        requires_grad=True)
        f = feats(rng, 3, 4)
        out, _, extra = static_dynamic_forward(f, static, state, cfg,
                                               want_output=True)
        eff = static.data[None] + extra.composed
        ref = np.matmul(eff, f.data.reshape(3, 4, -1)).reshape(out.shape)
        assert np.allclose(out.data, ref, atol=1e-6)
        assert np.array_equal(extra.composed.sum(axis=2),
                              np.ones((3, 8), dtype=np.float32))

    def test_reduction_rejected(self, rng):
        with pytest.raises(ConfigurationError):
            derive_expansion_config(8, 4)

    def test_rect_reg_reported(self, rng):
        cfg = derive_expansion_config(4, 8)
        state = init_aux_state(cfg, rng)
        f = feats(rng, 2, 4)
        _, reg, _ = static_dynamic_forward(f, None, state, cfg)
        assert float(reg.data) >= 0.0


class TestDeriveConfigs:
    def test_tiny_v1_configs_exact(self):
        for c, g in [(6, 3), (12, 3), (24, 3), (12, 2), (16, 4)]:
            cfg = derive_aux_config(c, g)
            assert cfg.composed_rows == c
            assert not cfg.needs_clip

    def test_tiny_v2_configs_cover(self):
        for c in (12, 24, 48, 58):
            cfg = derive_aux_config(c, 1, exact=False)
            assert cfg.composed_rows >= c

    def test_aux_macs_under_one_percent_of_tiny_model(self):
        from dynshuffle.models import ModelConfig, build_shufflenet
        m = build_shufflenet(1, ModelConfig(), "dynamic",
                             rng=np.random.default_rng(0))
        c = m.count_flops_params()
        assert c["aux_macs"] / c["macs"] < 0.01
