//! Linear warmup into cosine decay.

/// Learning rate at `step` of `total_steps`: a linear ramp from zero over
/// the warmup steps, then `base * 0.5 * (1 + cos(pi * progress))` falling
/// to zero at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    if warmup_steps > 0 && step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    if step >= total_steps {
        return 0.0;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
