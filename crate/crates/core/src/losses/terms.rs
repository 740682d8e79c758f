use serde::{Deserialize, Serialize};

use super::ssim::{window_indices, SsimWindow};
use crate::error::{Error, Result};
use crate::image_geometry::{check_dims, DepthMap, ImageGrid, ValidityMask};

/// Weights of the objective. The three roles that share one Greek letter in
/// the usual formulation get separate names here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Mix between the SSIM and L1 parts of the photometric cost.
    pub ssim_mix: f64,
    /// Weight of the depth-consistency terms.
    pub dc_weight: f64,
    /// Weight of the edge-aware smoothness term.
    pub smooth_weight: f64,
    /// Percentile `q ∈ (0, 100]` at which per-pixel costs are clipped.
    pub clip_percentile: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ssim_mix: 0.85,
            dc_weight: 1.0,
            smooth_weight: 0.01,
            clip_percentile: 95.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ssim_mix) {
            return Err(Error::invalid(format!("ssim_mix {} outside [0, 1]", self.ssim_mix)));
        }
        if !(self.dc_weight >= 0.0 && self.dc_weight.is_finite()) {
            return Err(Error::invalid(format!("dc_weight {} must be >= 0", self.dc_weight)));
        }
        if !(self.smooth_weight >= 0.0 && self.smooth_weight.is_finite()) {
            return Err(Error::invalid(format!("smooth_weight {} must be >= 0", self.smooth_weight)));
        }
        if !(self.clip_percentile > 0.0 && self.clip_percentile <= 100.0) {
            return Err(Error::invalid(format!(
                "clip_percentile {} outside (0, 100]",
                self.clip_percentile
            )));
        }
        Ok(())
    }
}

/// Per-pixel nonnegative costs with validity flags.
#[derive(Debug, Clone, PartialEq)]
pub struct CostField {
    pub width: usize,
    pub height: usize,
    pub cost: Vec<f64>,
    pub valid: Vec<bool>,
}

impl CostField {
    pub fn valid_costs(&self) -> impl Iterator<Item = f64> + '_ {
        self.cost.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(c, _)| *c)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Sum of valid costs in index order.
    pub fn sum(&self) -> f64 {
        self.valid_costs().sum()
    }
}

/// `mix·(1 − SSIM)/2 + (1 − mix)·|synth − real|`, averaged over channels.
/// SSIM windows pool only pixels where `mask` is set.
pub fn photometric_cost(
    real: &ImageGrid,
    synth: &ImageGrid,
    mask: &ValidityMask,
    ssim_mix: f64,
) -> Result<CostField> {
    check_dims(real.dims(), synth.dims())?;
    check_dims(real.dims(), mask.dims())?;
    if real.channels() != synth.channels() {
        return Err(Error::invalid("channel count mismatch"));
    }
    let (w, h, ch) = (real.width(), real.height(), real.channels());
    let mut cost = vec![0.0; w * h];
    let mut idx = Vec::with_capacity(9);
    let (mut xs, mut ys) = (Vec::with_capacity(9), Vec::with_capacity(9));
    for i in 0..w * h {
        if !mask.flags()[i] {
            continue;
        }
        window_indices(i % w, i / w, w, h, mask.flags(), &mut idx);
        let mut total = 0.0;
        for c in 0..ch {
            xs.clear();
            ys.clear();
            for &j in &idx {
                xs.push(synth.data()[j * ch + c]);
                ys.push(real.data()[j * ch + c]);
            }
            let s = SsimWindow::eval(&xs, &ys).value;
            let l1 = (synth.data()[i * ch + c] - real.data()[i * ch + c]).abs();
            total += ssim_mix * (1.0 - s) / 2.0 + (1.0 - ssim_mix) * l1;
        }
        cost[i] = total / ch as f64;
    }
    Ok(CostField {
        width: w,
        height: h,
        cost,
        valid: mask.flags().to_vec(),
    })
}

/// `|D_transported − D_sampled|` where both depths and the mask are valid.
pub fn depth_consistency_cost(
    transported: &DepthMap,
    sampled: &DepthMap,
    mask: &ValidityMask,
) -> Result<CostField> {
    check_dims(transported.dims(), sampled.dims())?;
    check_dims(transported.dims(), mask.dims())?;
    let (w, h) = transported.dims();
    let mut cost = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for i in 0..w * h {
        let ok = mask.flags()[i] && transported.validity()[i] && sampled.validity()[i];
        if ok {
            cost[i] = (transported.values()[i] - sampled.values()[i]).abs();
            valid[i] = true;
        }
    }
    Ok(CostField {
        width: w,
        height: h,
        cost,
        valid,
    })
}

/// Edge-aware smoothness `Σ |∂x d|·e^{−|∂x I|} + |∂y d|·e^{−|∂y I|}` with
/// forward differences; the image gradient uses the channel mean. Pairs with
/// an invalid disparity are skipped.
pub fn smoothness_cost(disparity: &DepthMap, image: &ImageGrid) -> Result<f64> {
    check_dims(disparity.dims(), image.dims())?;
    let gray = image.channel_mean();
    let (w, h) = disparity.dims();
    let d = disparity.values();
    let ok = disparity.validity();
    let g = gray.data();
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !ok[i] {
                continue;
            }
            if x + 1 < w && ok[i + 1] {
                total += (d[i + 1] - d[i]).abs() * (-(g[i + 1] - g[i]).abs()).exp();
            }
            if y + 1 < h && ok[i + w] {
                total += (d[i + w] - d[i]).abs() * (-(g[i + w] - g[i]).abs()).exp();
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ssim::SSIM_C1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, w: usize, h: usize, c: usize) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::from_fn(w, h, c, |_, _, _| rng.gen()).unwrap()
    }

    #[test]
    fn identical_images_cost_nothing() {
        let x = random(4, 6, 5, 3);
        let c = photometric_cost(&x, &x, &ValidityMask::all(6, 5, true), 0.85).unwrap();
        assert!(c.cost.iter().all(|v| *v == 0.0));
        assert_eq!(c.valid_count(), 30);
    }

    #[test]
    fn zero_mix_is_l1() {
        let x = random(5, 4, 4, 3);
        let y = random(6, 4, 4, 3);
        let c = photometric_cost(&x, &y, &ValidityMask::all(4, 4, true), 0.0).unwrap();
        for i in 0..16 {
            let l1: f64 = (0..3).map(|ch| (x.data()[i * 3 + ch] - y.data()[i * 3 + ch]).abs()).sum::<f64>() / 3.0;
            assert!((c.cost[i] - l1).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_images_hand_value() {
        let x = ImageGrid::filled(3, 3, 1, 0.2).unwrap();
        let y = ImageGrid::filled(3, 3, 1, 0.8).unwrap();
        let s = (2.0 * 0.2 * 0.8 + SSIM_C1) / (0.2f64.powi(2) + 0.8f64.powi(2) + SSIM_C1);
        let expect = 0.85 * (1.0 - s) / 2.0 + 0.15 * 0.6;
        let c = photometric_cost(&x, &y, &ValidityMask::all(3, 3, true), 0.85).unwrap();
        for v in &c.cost {
            assert!((v - expect).abs() < 1e-12);
        }
        assert!((expect - 0.3149).abs() < 2e-4);
    }

    #[test]
    fn masked_pixels_are_invalid() {
        let x = random(7, 3, 3, 1);
        let mut flags = vec![true; 9];
        flags[0] = false;
        let c = photometric_cost(&x, &random(8, 3, 3, 1), &ValidityMask::new(3, 3, flags).unwrap(), 0.85).unwrap();
        assert!(!c.valid[0]);
        assert_eq!(c.cost[0], 0.0);
        assert_eq!(c.valid_count(), 8);
    }

    #[test]
    fn depth_consistency_cases() {
        let a = DepthMap::filled(3, 2, 2.0).unwrap();
        let b = DepthMap::filled(3, 2, 2.5).unwrap();
        let all = ValidityMask::all(3, 2, true);
        assert!(depth_consistency_cost(&a, &a, &all).unwrap().cost.iter().all(|v| *v == 0.0));
        assert!(depth_consistency_cost(&a, &b, &all).unwrap().cost.iter().all(|v| *v == 0.5));
        let mut vals = vec![2.5; 6];
        vals[1] = f64::NAN;
        let partial = DepthMap::from_values(3, 2, vals).unwrap();
        let c = depth_consistency_cost(&a, &partial, &all).unwrap();
        assert_eq!(c.valid_count(), 5);
        assert!(depth_consistency_cost(&a, &DepthMap::filled(2, 3, 1.0).unwrap(), &all).is_err());
    }

    #[test]
    fn smoothness_constant_disparity_is_zero() {
        let d = DepthMap::filled(5, 4, 0.3).unwrap();
        assert_eq!(smoothness_cost(&d, &random(1, 5, 4, 3)).unwrap(), 0.0);
    }

    #[test]
    fn smoothness_step_on_flat_image() {
        // Step of 1 between columns 0 and 1 on a 2×2 grid: two boundary pixels.
        let d = DepthMap::from_values(2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        let img = ImageGrid::filled(2, 2, 3, 0.4).unwrap();
        assert_eq!(smoothness_cost(&d, &img).unwrap(), 2.0);
    }

    #[test]
    fn smoothness_step_on_image_edge() {
        let g = 0.6;
        let d = DepthMap::from_values(2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        let img = ImageGrid::from_fn(2, 2, 3, |x, _, _| if x == 0 { 0.1 } else { 0.1 + g }).unwrap();
        let expect = 2.0 * (-g).exp();
        assert!((smoothness_cost(&d, &img).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = [
            LossWeights { ssim_mix: 1.5, ..Default::default() },
            LossWeights { dc_weight: -1.0, ..Default::default() },
            LossWeights { smooth_weight: f64::NAN, ..Default::default() },
            LossWeights { clip_percentile: 0.0, ..Default::default() },
            LossWeights { clip_percentile: 100.5, ..Default::default() },
        ];
        for w in bad {
            assert!(w.validate().is_err(), "{w:?}");
        }
    }
}
