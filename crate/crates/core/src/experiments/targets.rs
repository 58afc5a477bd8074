use std::f64::consts::PI;

use crate::target::TargetFunction;

/// `f(x) = 1 / (1 + cos^2(pi x))` with analytic first and second derivatives.
///
/// Its Taylor coefficients decay slowly, which keeps the asymptotic regime of
/// the convergence plots visible across a wide range of widths.
pub fn target_1d() -> TargetFunction {
    TargetFunction::scalar("paper1d", |x| {
        let c = (PI * x).cos();
        1.0 / (1.0 + c * c)
    })
    .with_derivatives(
        |x| {
            // f = 1/q, q = 1 + cos^2, q' = -pi sin(2 pi x)
            let c = (PI * x).cos();
            let q = 1.0 + c * c;
            PI * (2.0 * PI * x).sin() / (q * q)
        },
        |x| {
            let c = (PI * x).cos();
            let q = 1.0 + c * c;
            let dq = -PI * (2.0 * PI * x).sin();
            let ddq = -2.0 * PI * PI * (2.0 * PI * x).cos();
            2.0 * dq * dq / (q * q * q) - ddq / (q * q)
        },
    )
}

/// `sin(4x) sin(4y)` on the plane.
pub fn target_2d() -> TargetFunction {
    TargetFunction::new("sin4x_sin4y", 2, 1, |x, out| {
        out[0] = (4.0 * x[0]).sin() * (4.0 * x[1]).sin();
    })
}

pub fn linear() -> TargetFunction {
    TargetFunction::scalar("linear", |x| 0.75 * x - 0.2).with_derivatives(|_| 0.75, |_| 0.0)
}

pub fn quadratic() -> TargetFunction {
    TargetFunction::scalar("quadratic", |x| x * x - 0.5 * x + 0.1)
        .with_derivatives(|x| 2.0 * x - 0.5, |_| 2.0)
}

pub fn cubic() -> TargetFunction {
    TargetFunction::scalar("cubic", |x| x * x * x).with_derivatives(|x| 3.0 * x * x, |x| 6.0 * x)
}

/// Named 1D/2D targets known to the CLI.
pub fn by_name(name: &str) -> Option<TargetFunction> {
    match name {
        "paper1d" => Some(target_1d()),
        "sin2d" | "sin4x_sin4y" => Some(target_2d()),
        "linear" => Some(linear()),
        "quadratic" => Some(quadratic()),
        "cubic" => Some(cubic()),
        _ => None,
    }
}

pub const TARGET_NAMES: &[&str] = &["paper1d", "sin2d", "linear", "quadratic", "cubic"];
