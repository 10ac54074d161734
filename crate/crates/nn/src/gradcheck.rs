//! Central finite differences for verifying hand-written backward passes.

/// Central-difference derivative of `loss` with respect to `get(state)[i]`
/// for each `i` in `indices`. The state is restored after every probe.
pub fn numeric_gradient<S>(
    state: &mut S,
    get: impl Fn(&mut S) -> &mut [f64],
    indices: &[usize],
    h: f64,
    loss: impl Fn(&S) -> f64,
) -> Vec<f64> {
    indices
        .iter()
        .map(|&i| {
            let original = get(state)[i];
            get(state)[i] = original + h;
            let plus = loss(state);
            get(state)[i] = original - h;
            let minus = loss(state);
            get(state)[i] = original;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Central-difference derivative of a piecewise-smooth `f` at step `0`.
///
/// Estimates at `h` and `h/2` agree closely when `f` is smooth over the
/// stencil. When they do not, a kink (ReLU switch, max-pool argmax change)
/// lies inside it, and the step shrinks tenfold, down to `h_min`.
pub fn kink_aware_derivative(mut f: impl FnMut(f64) -> f64, h: f64, h_min: f64) -> f64 {
    let central = |f: &mut dyn FnMut(f64) -> f64, h: f64| (f(h) - f(-h)) / (2.0 * h);
    let mut h = h;
    loop {
        let coarse = central(&mut f, h);
        let fine = central(&mut f, h / 2.0);
        if (coarse - fine).abs() <= 1e-6 * fine.abs().max(coarse.abs()) + 1e-9 || h / 10.0 < h_min {
            return fine;
        }
        h /= 10.0;
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)` over whole vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied())
        .max(norm(&mut numeric.iter().copied()))
        .max(floor);
    diff / scale
}
