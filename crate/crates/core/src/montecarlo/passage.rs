//! Exact first passage of Brownian motion with drift below a fixed level.

use rand::Rng;
use rand_distr::{Distribution, InverseGaussian, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Passage {
    /// Barrier reached after this long.
    Hit(f64),
    /// Barrier not reached; displacement over the window.
    Survive(f64),
    /// Barrier never reached on an unbounded window.
    Escape,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Runs `D(t) = dist + mu t + √var W(t)` for `duration` (possibly infinite)
/// and reports whether and when it first reaches 0.
///
/// The hitting time is drawn from its (possibly defective) inverse Gaussian
/// law. If it falls beyond the window, the endpoint is drawn conditionally on
/// survival by rejection against the Brownian bridge crossing probability.
pub(crate) fn first_passage<R: Rng + ?Sized>(
    dist: f64,
    mu: f64,
    var: f64,
    duration: f64,
    rng: &mut R,
) -> Passage {
    debug_assert!(var > 0.0 && duration >= 0.0);
    if dist <= 0.0 {
        return Passage::Hit(0.0);
    }
    if dist.is_infinite() {
        return if duration.is_infinite() {
            Passage::Escape
        } else {
            Passage::Survive(mu * duration + (var * duration).sqrt() * normal(rng))
        };
    }
    // drift towards the barrier
    let toward = -mu;
    let shape = dist * dist / var;
    let hit_time = if toward == 0.0 {
        shape / normal(rng).powi(2)
    } else if toward > 0.0 || rng.random::<f64>() < (2.0 * toward * dist / var).exp() {
        InverseGaussian::new(dist / toward.abs(), shape)
            .expect("positive parameters")
            .sample(rng)
    } else {
        f64::INFINITY
    };
    if hit_time.is_finite() && hit_time <= duration {
        return Passage::Hit(hit_time);
    }
    if duration.is_infinite() {
        return Passage::Escape;
    }
    if duration == 0.0 {
        return Passage::Survive(0.0);
    }
    let (centre, sd) = (dist + mu * duration, (var * duration).sqrt());
    loop {
        let end = centre + sd * normal(rng);
        if end > 0.0 && rng.random::<f64>() >= (-2.0 * dist * end / (var * duration)).exp() {
            return Passage::Survive(end - dist);
        }
    }
}
