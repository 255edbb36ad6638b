use crate::registry::Registry;

/// Linear warmup from 0 over the first `warmup_frac` of steps, then cosine
/// decay to 0 at `total`.
pub fn lr_schedule(step: usize, total: usize, base: f64, warmup_frac: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let step = step.min(total);
    let warmup = ((warmup_frac * total as f64).round() as usize).min(total);
    if step < warmup {
        return base * step as f64 / warmup as f64;
    }
    if total == warmup {
        return base;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Weight of the attention loss per epoch (epochs counted from 0).
pub trait GammaSchedule: Send + Sync {
    fn gamma(&self, epoch: usize, value: f64) -> f64;
}

/// `e^{-i}` with `i` the 0-based epoch.
pub struct EpochDecay;
/// `e^{-(i+1)}`.
pub struct EpochDecayOneBased;
/// The configured value, every epoch.
pub struct Constant;

impl GammaSchedule for EpochDecay {
    fn gamma(&self, epoch: usize, _: f64) -> f64 {
        (-(epoch as f64)).exp()
    }
}

impl GammaSchedule for EpochDecayOneBased {
    fn gamma(&self, epoch: usize, _: f64) -> f64 {
        (-((epoch + 1) as f64)).exp()
    }
}

impl GammaSchedule for Constant {
    fn gamma(&self, _: usize, value: f64) -> f64 {
        value
    }
}

pub fn gamma_schedules() -> Registry<dyn GammaSchedule> {
    let mut r: Registry<dyn GammaSchedule> = Registry::new("gamma schedule");
    r.register("epoch_decay", Box::new(EpochDecay));
    r.register("epoch_decay_one_based", Box::new(EpochDecayOneBased));
    r.register("constant", Box::new(Constant));
    r
}
