/// `max(0, ‖pred − label‖₂ − ε)`. A NaN distance stays NaN.
pub fn hinge_loss(pred: &[f64], label: &[f64], epsilon: f64) -> f64 {
    let d = distance(pred, label);
    if d.is_nan() {
        return f64::NAN;
    }
    (d - epsilon).max(0.0)
}

/// Loss and its gradient with respect to `pred`. The subgradient at the hinge
/// kink and at `pred = label` is zero.
pub fn hinge_loss_grad(pred: &[f64], label: &[f64], epsilon: f64, grad: &mut [f64]) -> f64 {
    let d = distance(pred, label);
    if d.is_nan() {
        grad.iter_mut().for_each(|g| *g = f64::NAN);
        return f64::NAN;
    }
    if d > epsilon && d > 0.0 {
        for ((g, p), l) in grad.iter_mut().zip(pred).zip(label) {
            *g = (p - l) / d;
        }
        d - epsilon
    } else {
        grad.iter_mut().for_each(|g| *g = 0.0);
        0.0
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
