use super::Real;

const LANES: usize = 16;

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [S::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: S = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = S::zero();
    for v in acc {
        s += v;
    }
    s + tail
}

/// `y += alpha·x`
#[inline]
pub fn axpy<S: Real>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn add_assign<S: Real>(y: &mut [S], x: &[S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}
