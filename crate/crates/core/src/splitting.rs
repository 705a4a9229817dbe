//! Magnitude-based splitting of the large model into per-robot sub-models.
//!
//! The large model's weights are ranked by absolute value and the smallest
//! fraction is masked to zero. Surviving coordinates are then fine-tuned on
//! the robot's own recent data while pruned coordinates stay exactly zero.

use crate::error::{Error, Result};
use crate::model::{Loss, MlpModel, ParamVector, SgdConfig};
use crate::world::RobotId;

/// One supervised `(input, target)` pair.
pub type Sample = (Vec<f64>, Vec<f64>);

/// Binary keep-mask aligned with a [`ParamVector`]'s flat values.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsityMask {
    bits: Vec<bool>,
    sparsity: f64,
}

impl SparsityMask {
    pub fn dense(len: usize) -> Self {
        Self { bits: vec![true; len], sparsity: 0.0 }
    }

    /// Builds a mask from explicit bits; `sparsity` must account for exactly
    /// the number of cleared bits.
    pub fn from_bits(bits: Vec<bool>, sparsity: f64) -> Result<Self> {
        check_sparsity(sparsity)?;
        let zeros = bits.iter().filter(|b| !**b).count();
        let expected = prune_count(sparsity, bits.len());
        if zeros != expected {
            return Err(Error::invalid(format!(
                "mask has {zeros} zeros but sparsity {sparsity} of {} implies {expected}",
                bits.len()
            )));
        }
        Ok(Self { bits, sparsity })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn sparsity(&self) -> f64 {
        self.sparsity
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_zeros(&self) -> usize {
        self.bits.iter().filter(|b| !**b).count()
    }

    /// True when every coordinate pruned by `other` is also pruned here.
    pub fn contains_pruned_of(&self, other: &SparsityMask) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(a, b)| *b || !*a)
    }

    /// Flips one bit. Only meant for fault-injection in the verify harness.
    #[doc(hidden)]
    pub fn corrupt_bit(&mut self, k: usize) {
        if let Some(b) = self.bits.get_mut(k) {
            *b = !*b;
        }
    }
}

/// Which coordinates take part in the magnitude ranking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PruneScope {
    /// Every coordinate, biases included.
    All,
    /// Only weights; biases are always kept.
    WeightsOnly,
}

fn check_sparsity(sparsity: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::invalid(format!("sparsity must be in [0, 1), got {sparsity}")));
    }
    Ok(())
}

/// `floor(sparsity * len)`.
pub fn prune_count(sparsity: f64, len: usize) -> usize {
    (sparsity * len as f64).floor() as usize
}

/// Prunes `floor(sparsity * N)` coordinates with the smallest magnitudes,
/// lower indices first among equal magnitudes.
pub fn build_mask(params: &ParamVector, sparsity: f64) -> Result<SparsityMask> {
    build_mask_scoped(params, sparsity, PruneScope::All)
}

/// Like [`build_mask`], restricted to `scope`. The pruned count is always
/// `floor(sparsity * N)` over the full vector so the zero-count invariant
/// holds regardless of scope.
pub fn build_mask_scoped(params: &ParamVector, sparsity: f64, scope: PruneScope) -> Result<SparsityMask> {
    check_sparsity(sparsity)?;
    let n = params.len();
    let k = prune_count(sparsity, n);
    let candidates: Vec<usize> = match scope {
        PruneScope::All => (0..n).collect(),
        PruneScope::WeightsOnly => {
            let is_bias = params.bias_mask();
            (0..n).filter(|&i| !is_bias[i]).collect()
        }
    };
    if k > candidates.len() {
        return Err(Error::invalid(format!(
            "sparsity {sparsity} needs {k} pruned coordinates but only {} are prunable",
            candidates.len()
        )));
    }
    let values = params.values();
    let mut ranked = candidates;
    ranked.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()).then(a.cmp(&b)));
    let mut bits = vec![true; n];
    for &i in &ranked[..k] {
        bits[i] = false;
    }
    Ok(SparsityMask { bits, sparsity })
}

pub fn apply_mask(params: &ParamVector, mask: &SparsityMask) -> Result<ParamVector> {
    if params.len() != mask.len() {
        return Err(Error::DimensionMismatch { context: "apply_mask", expected: params.len(), actual: mask.len() });
    }
    let values = params.values().iter().zip(&mask.bits).map(|(v, b)| if *b { *v } else { 0.0 }).collect();
    ParamVector::new(params.shapes().to_vec(), values)
}

/// A robot's pruned, fine-tuned copy of the large model.
#[derive(Clone, Debug, PartialEq)]
pub struct SubModel {
    pub robot_id: RobotId,
    pub model: MlpModel,
    pub mask: SparsityMask,
}

impl SubModel {
    /// Masks `model` and wraps it.
    pub fn new(robot_id: RobotId, mut model: MlpModel, mask: SparsityMask) -> Result<Self> {
        let masked = apply_mask(model.params(), &mask)?;
        model.set_params(masked)?;
        Ok(Self { robot_id, model, mask })
    }

    pub fn params(&self) -> &ParamVector {
        self.model.params()
    }

    /// Robot id (`u32`), the parameter bytes, then the mask as a bitmap.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(&self.robot_id.to_le_bytes());
        out.extend_from_slice(&self.params().to_bytes());
        let mut bitmap = vec![0u8; self.mask.len().div_ceil(8)];
        for (k, keep) in self.mask.bits().iter().enumerate() {
            if *keep {
                bitmap[k / 8] |= 1 << (k % 8);
            }
        }
        out.extend_from_slice(&bitmap);
        out
    }

    pub fn serialized_len(&self) -> usize {
        4 + crate::model::serialized_len(self.params().shapes()) + self.mask.len().div_ceil(8)
    }

    /// Inverse of [`SubModel::to_bytes`]; the output activation is not
    /// encoded and must be supplied.
    pub fn from_bytes(bytes: &[u8], output: crate::model::OutputActivation) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Decode("sub-model record shorter than its header".into()));
        }
        let robot_id = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"));
        let rest = &bytes[4..];
        // the parameter block length is implied by its own header
        let layers = rest
            .get(6..8)
            .map(|b| u16::from_le_bytes(b.try_into().expect("2 bytes")) as usize)
            .ok_or_else(|| Error::Decode("truncated sub-model parameters".into()))?;
        let header = crate::model::header_len(layers);
        if rest.len() < header {
            return Err(Error::Decode("truncated sub-model parameters".into()));
        }
        let mut count = 0usize;
        for l in 0..layers {
            let at = 8 + 8 * l;
            let i = u32::from_le_bytes(rest[at..at + 4].try_into().expect("4 bytes")) as usize;
            let o = u32::from_le_bytes(rest[at + 4..at + 8].try_into().expect("4 bytes")) as usize;
            count = count.saturating_add(i.saturating_mul(o).saturating_add(o));
        }
        let param_len = header.saturating_add(count.saturating_mul(8));
        if rest.len() != param_len.saturating_add(count.div_ceil(8)) {
            return Err(Error::Decode("sub-model record has the wrong length".into()));
        }
        let params = ParamVector::from_bytes(&rest[..param_len])?;
        let bitmap = &rest[param_len..];
        let bits: Vec<bool> = (0..count).map(|k| bitmap[k / 8] & (1 << (k % 8)) != 0).collect();
        let zeros = bits.iter().filter(|b| !**b).count();
        let mask = SparsityMask { bits, sparsity: zeros as f64 / count.max(1) as f64 };
        let model = MlpModel::new(params, output)?;
        let sub = SubModel { robot_id, model, mask };
        if !sub.respects_mask() {
            return Err(Error::Decode("sub-model has non-zero pruned coordinates".into()));
        }
        Ok(sub)
    }

    /// True when every masked coordinate is exactly zero.
    pub fn respects_mask(&self) -> bool {
        self.params().values().iter().zip(self.mask.bits()).all(|(v, b)| *b || *v == 0.0)
    }
}

/// Iterative prune-and-retrain schedule with a linear sparsity ramp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneSchedule {
    pub rounds: usize,
    pub final_sparsity: f64,
    pub fine_tune_steps: usize,
}

impl PruneSchedule {
    pub fn new(rounds: usize, final_sparsity: f64, fine_tune_steps: usize) -> Result<Self> {
        let s = Self { rounds, final_sparsity, fine_tune_steps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("prune schedule needs at least one round"));
        }
        check_sparsity(self.final_sparsity)
    }

    /// Sparsity after round `k` (1-based).
    pub fn sparsity_at(&self, k: usize) -> f64 {
        if k >= self.rounds {
            self.final_sparsity
        } else {
            self.final_sparsity * k as f64 / self.rounds as f64
        }
    }
}

/// Masked minibatch SGD. Batches walk the dataset cyclically; the gradient
/// is zeroed on pruned coordinates and the mask re-applied after each step.
pub fn fine_tune(sub: &SubModel, dataset: &[Sample], steps: usize, cfg: &SgdConfig) -> Result<SubModel> {
    let mut out = sub.clone();
    if steps == 0 {
        return Ok(out);
    }
    if dataset.is_empty() {
        return Err(Error::invalid("fine-tuning needs data when steps > 0"));
    }
    for (x, t) in dataset {
        if x.len() != sub.model.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "fine-tune input",
                expected: sub.model.input_dim(),
                actual: x.len(),
            });
        }
        if t.len() != sub.model.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "fine-tune target",
                expected: sub.model.output_dim(),
                actual: t.len(),
            });
        }
    }
    let batch = cfg.batch_size.min(dataset.len());
    let mut cursor = 0;
    let mut grad = vec![0.0; sub.params().len()];
    for _ in 0..steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for _ in 0..batch {
            let (x, t) = &dataset[cursor];
            cursor = (cursor + 1) % dataset.len();
            let trace = out.model.trace(x)?;
            let d_out = Loss::Mse.gradient(trace.output(), t);
            out.model.backward_accumulate(&trace, &d_out, &mut grad, false)?;
        }
        let scale = cfg.learning_rate / batch as f64;
        let values = out.model.params_mut().values_mut();
        for ((v, g), keep) in values.iter_mut().zip(&grad).zip(out.mask.bits()) {
            if *keep {
                *v -= scale * g;
            } else {
                *v = 0.0;
            }
        }
        if !out.model.params().all_finite() {
            return Err(Error::NonFinite { layer: out.model.num_layers() - 1 });
        }
    }
    Ok(out)
}

/// Mean MSE of `model` over `dataset`.
pub fn mean_loss(model: &MlpModel, dataset: &[Sample]) -> Result<f64> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (x, t) in dataset {
        total += Loss::Mse.value(&model.forward(x)?, t);
    }
    Ok(total / dataset.len() as f64)
}

/// Result of [`split_for_robot`].
#[derive(Clone, Debug, PartialEq)]
pub struct SplitOutcome {
    pub sub: SubModel,
    /// Set when fine-tuning was requested but the robot had no data.
    pub fine_tune_skipped: bool,
}

/// Prunes the large model along `schedule`, fine-tuning on the robot's data
/// after each masking step. Masks are ranked on the large model's weights
/// (biases exempt), so every robot receives the same mask for the same
/// large model.
pub fn split_for_robot(
    lai: &MlpModel,
    schedule: &PruneSchedule,
    trajectory_data: &[Sample],
    robot_id: RobotId,
    cfg: &SgdConfig,
) -> Result<SplitOutcome> {
    schedule.validate()?;
    let skip = trajectory_data.is_empty();
    let mut sub = SubModel::new(robot_id, lai.clone(), SparsityMask::dense(lai.params().len()))?;
    for k in 1..=schedule.rounds {
        let mask = build_mask_scoped(lai.params(), schedule.sparsity_at(k), PruneScope::WeightsOnly)?;
        sub = SubModel::new(robot_id, sub.model, mask)?;
        if !skip {
            sub = fine_tune(&sub, trajectory_data, schedule.fine_tune_steps, cfg)?;
        }
    }
    Ok(SplitOutcome { sub, fine_tune_skipped: skip && schedule.fine_tune_steps > 0 })
}

/// Distillation targets: the large model's own outputs on `inputs`.
pub fn distillation_data(lai: &MlpModel, inputs: &[Vec<f64>]) -> Result<Vec<Sample>> {
    inputs.iter().map(|x| Ok((x.clone(), lai.forward(x)?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{topology, LayerShape, OutputActivation};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat(values: &[f64]) -> ParamVector {
        ParamVector::new(vec![LayerShape::new(values.len() - 1, 1).unwrap()], values.to_vec()).unwrap()
    }

    fn zeros_at(mask: &SparsityMask) -> Vec<usize> {
        mask.bits().iter().enumerate().filter(|(_, b)| !**b).map(|(i, _)| i).collect()
    }

    fn desk_model(seed: u64) -> MlpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpModel::init_uniform(topology(6, &[16, 16], 2).unwrap(), OutputActivation::Sigmoid, &mut rng).unwrap()
    }

    fn desk_data(seed: u64, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn zero_sparsity_keeps_everything() {
        let m = build_mask(&flat(&[0.1, -0.5, 0.3, -0.05]), 0.0).unwrap();
        assert!(m.bits().iter().all(|b| *b));
    }

    #[test]
    fn half_sparsity_prunes_two_smallest() {
        let m = build_mask(&flat(&[0.1, -0.5, 0.3, -0.05]), 0.5).unwrap();
        assert_eq!(zeros_at(&m), vec![0, 3]);
    }

    #[test]
    fn quarter_sparsity_of_four_prunes_one() {
        let m = build_mask(&flat(&[1.0, 2.0, 3.0, 4.0]), 0.25).unwrap();
        assert_eq!(m.count_zeros(), 1);
        assert_eq!(zeros_at(&m), vec![0]);
    }

    #[test]
    fn ties_prune_lower_index_first() {
        let m = build_mask(&flat(&[0.2, -0.2, 0.2, 0.2]), 0.5).unwrap();
        assert_eq!(zeros_at(&m), vec![0, 1]);
    }

    #[test]
    fn out_of_range_sparsity_is_rejected() {
        let p = flat(&[1.0, 2.0]);
        assert!(build_mask(&p, 1.0).is_err());
        assert!(build_mask(&p, -0.1).is_err());
        assert!(build_mask(&p, f64::NAN).is_err());
    }

    #[test]
    fn weights_only_scope_keeps_biases() {
        let m = desk_model(3);
        let mask = build_mask_scoped(m.params(), 0.7, PruneScope::WeightsOnly).unwrap();
        assert_eq!(mask.count_zeros(), prune_count(0.7, m.params().len()));
        for (b, is_bias) in mask.bits().iter().zip(m.params().bias_mask()) {
            if is_bias {
                assert!(*b);
            }
        }
    }

    #[test]
    fn weights_only_scope_rejects_impossible_sparsity() {
        // a 1->3 layer has 3 weights out of 6 values
        let p = ParamVector::zeros(vec![LayerShape::new(1, 3).unwrap()]);
        assert!(build_mask_scoped(&p, 0.5, PruneScope::WeightsOnly).is_ok());
        assert!(build_mask_scoped(&p, 0.67, PruneScope::WeightsOnly).is_err());
    }

    #[test]
    fn apply_mask_examples() {
        let p = flat(&[7.0, 8.0, 9.0]);
        let ones = SparsityMask::dense(3);
        assert_eq!(apply_mask(&p, &ones).unwrap(), p);
        let keep_one = SparsityMask::from_bits(vec![false, true, false], 2.0 / 3.0).unwrap();
        assert_eq!(apply_mask(&p, &keep_one).unwrap().values(), &[0.0, 8.0, 0.0]);
        let once = apply_mask(&p, &keep_one).unwrap();
        assert_eq!(apply_mask(&once, &keep_one).unwrap(), once);
        assert!(apply_mask(&p, &SparsityMask::dense(4)).is_err());
    }

    #[test]
    fn from_bits_checks_zero_count() {
        assert!(SparsityMask::from_bits(vec![false, true, true, true], 0.5).is_err());
        assert!(SparsityMask::from_bits(vec![false, true, true, true], 0.25).is_ok());
    }

    #[test]
    fn fine_tune_zero_steps_is_identity() {
        let m = desk_model(1);
        let mask = build_mask(m.params(), 0.3).unwrap();
        let sub = SubModel::new(0, m, mask).unwrap();
        assert_eq!(fine_tune(&sub, &[], 0, &SgdConfig::default()).unwrap(), sub);
    }

    #[test]
    fn fine_tune_single_weight_hand_step() {
        // w=2, bias pruned; x=3, t=0: grad = (2*3)*3 = 18, w' = 2 - 0.1*18
        let p = ParamVector::new(vec![LayerShape::new(1, 1).unwrap()], vec![2.0, 0.0]).unwrap();
        let model = MlpModel::new(p, OutputActivation::Identity).unwrap();
        let mask = SparsityMask::from_bits(vec![true, false], 0.5).unwrap();
        let sub = SubModel::new(0, model, mask).unwrap();
        let cfg = SgdConfig::new(0.1, 1).unwrap();
        let out = fine_tune(&sub, &[(vec![3.0], vec![0.0])], 1, &cfg).unwrap();
        assert!((out.params().values()[0] - 0.2).abs() < 1e-12);
        assert_eq!(out.params().values()[1], 0.0);
    }

    #[test]
    fn fine_tune_rejects_bad_dimensions() {
        let m = desk_model(1);
        let sub = SubModel::new(0, m.clone(), SparsityMask::dense(m.params().len())).unwrap();
        let bad = vec![(vec![0.0; 5], vec![0.0; 2])];
        assert!(fine_tune(&sub, &bad, 1, &SgdConfig::default()).is_err());
        let bad_t = vec![(vec![0.0; 6], vec![0.0; 3])];
        assert!(fine_tune(&sub, &bad_t, 1, &SgdConfig::default()).is_err());
        assert!(fine_tune(&sub, &[], 1, &SgdConfig::default()).is_err());
    }

    #[test]
    fn fine_tune_keeps_pruned_coordinates_zero_at_every_step() {
        let m = desk_model(2);
        let mask = build_mask(m.params(), 0.6).unwrap();
        let mut sub = SubModel::new(0, m, mask).unwrap();
        let data: Vec<Sample> = desk_data(5, 20).into_iter().map(|x| (x, vec![0.9, 0.1])).collect();
        let cfg = SgdConfig::new(0.5, 8).unwrap();
        for _ in 0..25 {
            sub = fine_tune(&sub, &data, 1, &cfg).unwrap();
            assert!(sub.respects_mask());
        }
    }

    #[test]
    fn schedule_ramp_is_linear_and_ends_at_final() {
        let s = PruneSchedule::new(2, 0.5, 0).unwrap();
        assert_eq!(s.sparsity_at(1), 0.25);
        assert_eq!(s.sparsity_at(2), 0.5);
        let s = PruneSchedule::new(5, 0.8, 0).unwrap();
        for k in 1..5 {
            assert!(s.sparsity_at(k) < s.sparsity_at(k + 1));
        }
        assert!(PruneSchedule::new(0, 0.5, 1).is_err());
        assert!(PruneSchedule::new(1, 1.0, 1).is_err());
    }

    #[test]
    fn single_round_zero_sparsity_reproduces_large_model() {
        let lai = desk_model(4);
        let s = PruneSchedule::new(1, 0.0, 0).unwrap();
        let out = split_for_robot(&lai, &s, &[], 3, &SgdConfig::default()).unwrap();
        assert_eq!(out.sub.model, lai);
        assert!(!out.fine_tune_skipped);
    }

    #[test]
    fn two_round_split_hits_final_zero_count() {
        let lai = desk_model(4);
        let s = PruneSchedule::new(2, 0.5, 3).unwrap();
        let data = distillation_data(&lai, &desk_data(1, 10)).unwrap();
        let out = split_for_robot(&lai, &s, &data, 0, &SgdConfig::default()).unwrap();
        assert_eq!(out.sub.mask.count_zeros(), prune_count(0.5, lai.params().len()));
        assert!(out.sub.respects_mask());
    }

    #[test]
    fn robots_share_masks_but_not_values() {
        let lai = desk_model(8);
        let s = PruneSchedule::new(3, 0.6, 20).unwrap();
        let cfg = SgdConfig::new(0.05, 16).unwrap();
        let a = distillation_data(&lai, &desk_data(100, 16)).unwrap();
        let b: Vec<Sample> = desk_data(200, 16).into_iter().map(|x| (x, vec![0.2, 0.8])).collect();
        let ra = split_for_robot(&lai, &s, &a, 0, &cfg).unwrap();
        let rb = split_for_robot(&lai, &s, &b, 1, &cfg).unwrap();
        assert_eq!(ra.sub.mask, rb.sub.mask);
        assert_ne!(ra.sub.params(), rb.sub.params());
    }

    #[test]
    fn empty_data_skips_fine_tuning_with_flag() {
        let lai = desk_model(9);
        let s = PruneSchedule::new(2, 0.4, 10).unwrap();
        let out = split_for_robot(&lai, &s, &[], 0, &SgdConfig::default()).unwrap();
        assert!(out.fine_tune_skipped);
        let mask = build_mask_scoped(lai.params(), 0.4, PruneScope::WeightsOnly).unwrap();
        assert_eq!(out.sub.params(), &apply_mask(lai.params(), &mask).unwrap());
    }

    #[test]
    fn fine_tuning_does_not_increase_loss_after_masking() {
        let lai = desk_model(11);
        let data = distillation_data(&lai, &desk_data(12, 64)).unwrap();
        let s = PruneSchedule::new(1, 0.5, 50).unwrap();
        let mask = build_mask_scoped(lai.params(), 0.5, PruneScope::WeightsOnly).unwrap();
        let masked = SubModel::new(0, lai.clone(), mask).unwrap();
        let before = mean_loss(&masked.model, &data).unwrap();
        let out = split_for_robot(&lai, &s, &data, 0, &SgdConfig::new(1e-3, 128).unwrap()).unwrap();
        let after = mean_loss(&out.sub.model, &data).unwrap();
        assert!(after <= before + 1e-9, "{after} > {before}");
    }

    #[test]
    fn sub_model_bytes_round_trip() {
        let lai = desk_model(21);
        let s = PruneSchedule::new(2, 0.5, 0).unwrap();
        let sub = split_for_robot(&lai, &s, &[], 7, &SgdConfig::default()).unwrap().sub;
        let bytes = sub.to_bytes();
        assert_eq!(bytes.len(), sub.serialized_len());
        let back = SubModel::from_bytes(&bytes, OutputActivation::Sigmoid).unwrap();
        assert_eq!(back.robot_id, 7);
        assert_eq!(back.model, sub.model);
        assert_eq!(back.mask.bits(), sub.mask.bits());
        assert!(SubModel::from_bytes(&bytes[..bytes.len() - 1], OutputActivation::Sigmoid).is_err());
        assert!(SubModel::from_bytes(&bytes[..3], OutputActivation::Sigmoid).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        let lai = desk_model(13);
        let data = distillation_data(&lai, &desk_data(14, 30)).unwrap();
        let s = PruneSchedule::new(3, 0.7, 5).unwrap();
        let cfg = SgdConfig::new(0.01, 8).unwrap();
        let a = split_for_robot(&lai, &s, &data, 2, &cfg).unwrap();
        let b = split_for_robot(&lai, &s, &data, 2, &cfg).unwrap();
        assert_eq!(a, b);
    }

    /// Brute-force oracle: prune the k smallest by repeatedly scanning for
    /// the minimum remaining magnitude.
    fn oracle_zeros(values: &[f64], k: usize) -> Vec<usize> {
        let mut taken = vec![false; values.len()];
        let mut out = Vec::new();
        for _ in 0..k {
            let mut best: Option<usize> = None;
            for (i, v) in values.iter().enumerate() {
                if taken[i] {
                    continue;
                }
                if best.is_none_or(|b| v.abs() < values[b].abs()) {
                    best = Some(i);
                }
            }
            let b = best.unwrap();
            taken[b] = true;
            out.push(b);
        }
        out.sort_unstable();
        out
    }

    proptest! {
        #[test]
        fn zero_count_matches_brute_force(
            values in prop::collection::vec(-10.0f64..10.0, 2..200),
            s in 0.0f64..0.999,
        ) {
            let p = flat(&values);
            let mask = build_mask(&p, s).unwrap();
            let k = (s * values.len() as f64).floor() as usize;
            prop_assert_eq!(mask.count_zeros(), k);
            prop_assert_eq!(zeros_at(&mask), oracle_zeros(&values, k));
        }

        #[test]
        fn masks_are_nested_as_sparsity_grows(
            values in prop::collection::vec(-10.0f64..10.0, 2..100),
            a in 0.0f64..0.99,
            b in 0.0f64..0.99,
        ) {
            let p = flat(&values);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let m_lo = build_mask(&p, lo).unwrap();
            let m_hi = build_mask(&p, hi).unwrap();
            prop_assert!(m_hi.contains_pruned_of(&m_lo));
        }

        #[test]
        fn apply_mask_is_idempotent(values in prop::collection::vec(-5.0f64..5.0, 2..60), s in 0.0f64..0.99) {
            let p = flat(&values);
            let m = build_mask(&p, s).unwrap();
            let once = apply_mask(&p, &m).unwrap();
            prop_assert_eq!(apply_mask(&once, &m).unwrap(), once);
        }
    }
}
