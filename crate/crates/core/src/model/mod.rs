//! The kernel attention network: parameters, blocks, forward pass, model
//! files, and a token self-attention baseline used for cost comparisons.

mod attention;
mod baseline;
mod config;
mod forward;
mod io;
mod params;

pub use attention::{
    attend, kernel_attention, multi_head_ka, multi_head_on_tape, project_flows, FlowInputs, FlowOutputs, FlowQkv,
};
pub use baseline::{self_attention_forward_on_tape, BaselineOutput};
pub use config::KatConfig;
pub use forward::{
    block_on_tape, forward_on_tape, kat_block, kat_forward, logits, loss, loss_and_gradient, ForwardOutput, Mode,
    LN_EPS,
};
pub(crate) use io::Reader;
pub use io::{decode_model, encode_model, load_model, save_model, MaskSettings, ModelFile, MODEL_MAGIC, MODEL_VERSION};
pub use params::{init_params, Affine, BlockWeights, KatParams, KatWeights, Norm, Projections, INIT_STD};

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::anchor_masks::{build_mask_stack, MaskStack, PatchGrid};
    use crate::autodiff::Tensor;
    use crate::KatError;

    fn random(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    fn projections(d: usize, rng: &mut ChaCha8Rng) -> Projections<Tensor> {
        Projections {
            query: random(d, d, 0.5, rng),
            key: random(d, d, 0.5, rng),
            value: random(d, d, 0.5, rng),
        }
    }

    fn grid(n: usize) -> PatchGrid {
        PatchGrid::new((0..n as i32).map(|i| (i / 5, i % 5)).collect()).unwrap()
    }

    #[test]
    fn single_kernel_distribution_flow_is_mask_times_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, d) = (6, 4);
        let x = random(n, d, 1.0, &mut rng);
        let k = random(1, d, 1.0, &mut rng);
        let c = random(1, d, 1.0, &mut rng);
        let mask = Tensor::matrix(1, n, (0..n).map(|i| 0.1 + 0.15 * i as f64).collect()).unwrap();
        let p = projections(d, &mut rng);
        let (xp, _, cp) = kernel_attention(&x, &k, &c, &mask, &p, 2.0).unwrap();
        let kv = k.matmul(&p.value).unwrap();
        for i in 0..n {
            for j in 0..d {
                assert!((xp.at(i, j) - mask.at(0, i) * kv.at(0, j)).abs() < 1e-12);
            }
        }
        // one kernel: the classification token reads that kernel's value
        for j in 0..d {
            assert!((cp.at(0, j) - kv.at(0, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_patches_give_their_value_to_every_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, kk, d) = (5, 3, 4);
        let row = random(1, d, 1.0, &mut rng);
        let x = Tensor::matrix(n, d, row.data().repeat(n)).unwrap();
        let k = random(kk, d, 1.0, &mut rng);
        let c = random(1, d, 1.0, &mut rng);
        let mask = Tensor::filled(&[kk, n], 1.0);
        let p = projections(d, &mut rng);
        let (_, kp, _) = kernel_attention(&x, &k, &c, &mask, &p, 2.0).unwrap();
        let xv = row.matmul(&p.value).unwrap();
        for r in 0..kk {
            for j in 0..d {
                assert!((kp.at(r, j) - xv.at(0, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn classification_flow_ignores_the_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, kk, d) = (7, 2, 4);
        let x = random(n, d, 1.0, &mut rng);
        let k = random(kk, d, 1.0, &mut rng);
        let c = random(1, d, 1.0, &mut rng);
        let p = projections(d, &mut rng);
        let m1 = Tensor::filled(&[kk, n], 1.0);
        let m2 = Tensor::matrix(kk, n, (0..kk * n).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap();
        let a = kernel_attention(&x, &k, &c, &m1, &p, 2.0).unwrap();
        let b = kernel_attention(&x, &k, &c, &m2, &p, 2.0).unwrap();
        assert_eq!(a.2, b.2);
        assert_ne!(a.0, b.0);
        assert_ne!(a.1, b.1);
    }

    #[test]
    fn one_head_with_identity_output_matches_kernel_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, kk, d) = (6, 2, 4);
        let config = KatConfig::new(3, d, 1, 1, 2);
        let mut block = init_params(&config, 9).unwrap().blocks.remove(0);
        block.out.weight = Tensor::identity(d);
        block.out.bias = Tensor::zeros(&[1, d]);
        let x = random(n, d, 1.0, &mut rng);
        let k = random(kk, d, 1.0, &mut rng);
        let c = random(1, d, 1.0, &mut rng);
        let mask = Tensor::matrix(kk, n, (0..kk * n).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap();
        let a = multi_head_ka(&x, &k, &c, &mask, &block, &config).unwrap();
        let b = kernel_attention(&x, &k, &c, &mask, &block.flows[0], config.tau()).unwrap();
        assert!(a.0.max_abs_diff(&b.0) < 1e-12);
        assert!(a.1.max_abs_diff(&b.1) < 1e-12);
        assert!(a.2.max_abs_diff(&b.2) < 1e-12);
    }

    #[test]
    fn zero_block_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, kk, d) = (5, 2, 8);
        let config = KatConfig::new(3, d, 1, 2, 2);
        let block = KatParams::zeros(&config).blocks.remove(0);
        let x = random(n, d, 1.0, &mut rng);
        let k = random(kk, d, 1.0, &mut rng);
        let c = random(1, d, 1.0, &mut rng);
        let mask = Tensor::filled(&[kk, n], 0.5);
        let (xo, ko, co) = kat_block(&x, &k, &c, &mask, &block, &config).unwrap();
        assert_eq!((xo, ko, co), (x, k, c));
    }

    #[test]
    fn large_inputs_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (n, kk, d) = (9, 3, 8);
        let config = KatConfig::new(3, d, 1, 2, 2);
        let block = init_params(&config, 1).unwrap().blocks.remove(0);
        let x = random(n, d, 1e3, &mut rng);
        let k = random(kk, d, 1e3, &mut rng);
        let c = random(1, d, 1e3, &mut rng);
        let mask = Tensor::filled(&[kk, n], 1.0);
        let (xo, ko, co) = kat_block(&x, &k, &c, &mask, &block, &config).unwrap();
        assert!(xo.is_finite() && ko.is_finite() && co.is_finite());
    }

    fn setup(seed: u64) -> (Tensor, MaskStack, KatParams, KatConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = KatConfig::new(6, 8, 2, 2, 3);
        let g = grid(23);
        let (_, masks) = build_mask_stack(&g, 4, 2, seed).unwrap();
        let x = random(23, 6, 1.0, &mut rng);
        (x, masks, init_params(&config, seed).unwrap(), config)
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let (x, masks, mut params, config) = setup(7);
        params.head.weight = Tensor::zeros(&[8, 3]);
        params.head.bias = Tensor::zeros(&[1, 3]);
        let l = logits(&x, &masks, &params, &config).unwrap();
        assert_eq!(l.data(), &[0.0; 3]);
    }

    #[test]
    fn forward_is_deterministic() {
        let (x, masks, params, config) = setup(8);
        let a = logits(&x, &masks, &params, &config).unwrap();
        let b = logits(&x, &masks, &params, &config).unwrap();
        assert_eq!(a.shape(), &[1, 3]);
        assert_eq!(a.data(), b.data());
        let (l1, g1) = loss_and_gradient(&params, &x, &masks, 2, &config, &mut Mode::Eval).unwrap();
        let (l2, g2) = loss_and_gradient(&params, &x, &masks, 2, &config, &mut Mode::Eval).unwrap();
        assert_eq!((l1, g1.len()), (l2, params.count()));
        assert_eq!(g1, g2);
    }

    #[test]
    fn patch_order_does_not_matter() {
        let (x, masks, params, config) = setup(9);
        let n = x.rows();
        let perm: Vec<usize> = (0..n).rev().collect();
        let xp = Tensor::matrix(n, x.cols(), perm.iter().flat_map(|&i| x.row(i).to_vec()).collect()).unwrap();
        let a = logits(&x, &masks, &params, &config).unwrap();
        let b = logits(&xp, &masks.permute_patches(&perm), &params, &config).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-10);
    }

    #[test]
    fn one_block_classification_ignores_features() {
        // the classification token reads only kernels, which enter the
        // first block as copies of the shared seed
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let config = KatConfig::new(6, 8, 1, 2, 3);
        let params = init_params(&config, 3).unwrap();
        let (_, masks) = build_mask_stack(&grid(23), 4, 1, 0).unwrap();
        let a = logits(&random(23, 6, 1.0, &mut rng), &masks, &params, &config).unwrap();
        let b = logits(&random(23, 6, 1.0, &mut rng), &masks, &params, &config).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let (x, masks, params, config) = setup(10);
        let wrong = Tensor::zeros(&[23, 5]);
        assert!(matches!(
            logits(&wrong, &masks, &params, &config),
            Err(KatError::Dimension(_))
        ));
        let one_scale = MaskStack {
            masks: masks.masks[..1].to_vec(),
            deltas: masks.deltas[..1].to_vec(),
        };
        assert!(matches!(
            logits(&x, &one_scale, &params, &config),
            Err(KatError::Config(_))
        ));
        let mut zeroed = masks.clone();
        zeroed.masks[1].data_mut()[3] = 0.0;
        assert!(matches!(
            logits(&x, &zeroed, &params, &config),
            Err(KatError::Contract(_))
        ));
        let short = Tensor::zeros(&[20, 6]);
        assert!(matches!(
            logits(&short, &masks, &params, &config),
            Err(KatError::Dimension(_))
        ));
    }

    #[test]
    fn dropout_only_acts_in_training() {
        let (x, masks, params, mut config) = setup(11);
        config.dropout = 0.5;
        let (e1, _) = loss_and_gradient(&params, &x, &masks, 0, &config, &mut Mode::Eval).unwrap();
        let e2 = loss(&params, &x, &masks, 0, &config).unwrap();
        assert!((e1 - e2).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (t, _) = loss_and_gradient(&params, &x, &masks, 0, &config, &mut Mode::Train(&mut rng)).unwrap();
        assert_ne!(t, e1);
    }
}
