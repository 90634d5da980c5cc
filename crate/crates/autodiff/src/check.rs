//! Central finite differences, kept independent of the graph machinery so it
//! can serve as an oracle for it.

use ndarray::Array2;

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` at each listed flat index of `x`.
pub fn central_difference<F>(x: &Array2<f64>, indices: &[usize], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut probe = x.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = x.as_slice().expect("standard layout")[i];
            probe.as_slice_mut().expect("standard layout")[i] = orig + h;
            let up = f(&probe);
            probe.as_slice_mut().expect("standard layout")[i] = orig - h;
            let down = f(&probe);
            probe.as_slice_mut().expect("standard layout")[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
