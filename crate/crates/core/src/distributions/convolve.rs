use super::DiscretePmf;

/// Exact discrete convolution `(a * b)(x) = sum_y a(y) b(x - y)`.
pub fn convolve(a: &DiscretePmf, b: &DiscretePmf) -> DiscretePmf {
    if a.is_empty() || b.is_empty() {
        return DiscretePmf::from_raw(a.origin() + b.origin(), Vec::new());
    }
    let (am, bm) = (a.masses(), b.masses());
    let mut out = vec![0.0; am.len() + bm.len() - 1];
    for (i, &x) in am.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out[i..i + bm.len()].iter_mut().zip(bm) {
            *o += x * y;
        }
    }
    DiscretePmf::from_raw(a.origin() + b.origin(), out)
}
