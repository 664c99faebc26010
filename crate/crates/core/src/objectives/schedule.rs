use std::f64::consts::PI;

use super::Schedule;

/// Learning rate used at 0-based `step` of `total` steps.
///
/// Linear warmup over `round(warmup_ratio * total)` steps reaches `peak` on
/// the last warmup step; the cosine schedule then decays to exactly 0 on
/// the final step.
pub fn learning_rate(step: usize, total: usize, peak: f64, warmup_ratio: f64, schedule: Schedule) -> f64 {
    let warmup = ((warmup_ratio * total as f64).round() as usize).min(total);
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    match schedule {
        Schedule::Constant => peak,
        Schedule::Cosine => {
            let decay = total - warmup;
            let progress = ((step + 1 - warmup) as f64 / decay as f64).min(1.0);
            peak * 0.5 * (1.0 + (PI * progress).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let total = 50;
        let peak = 1e-2;
        let lrs: Vec<f64> = (0..total)
            .map(|s| learning_rate(s, total, peak, 0.1, Schedule::Cosine))
            .collect();
        assert_eq!(lrs[4], peak);
        assert!(lrs[..4].windows(2).all(|w| w[0] < w[1]));
        assert!(lrs[4..].windows(2).all(|w| w[0] >= w[1]));
        assert!(lrs[total - 1] <= 1e-8 * peak);
        assert!((lrs[0] - peak / 5.0).abs() < 1e-18);
    }

    #[test]
    fn constant_and_no_warmup() {
        assert_eq!(learning_rate(7, 10, 0.5, 0.0, Schedule::Constant), 0.5);
        assert_eq!(learning_rate(0, 10, 0.5, 0.2, Schedule::Constant), 0.25);
        assert!(learning_rate(0, 10, 0.5, 0.0, Schedule::Cosine) < 0.5);
        assert_eq!(learning_rate(9, 10, 0.5, 0.0, Schedule::Cosine), 0.0);
        assert_eq!(learning_rate(0, 1, 0.5, 0.1, Schedule::Cosine), 0.0);
    }
}
