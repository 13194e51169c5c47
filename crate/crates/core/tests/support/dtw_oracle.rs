//! Brute-force DTW: the minimum over every monotone warping path.

/// Minimum absolute-difference cost over all paths from `(0,0)` to the
/// last cell with steps `(1,0)`, `(0,1)`, `(1,1)`.
pub fn dtw_by_paths(a: &[u8], b: &[u8]) -> f64 {
    fn walk(a: &[u8], b: &[u8], i: usize, j: usize, acc: u32, best: &mut u32) {
        let acc = acc + a[i].abs_diff(b[j]) as u32;
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = (*best).min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = u32::MAX;
    walk(a, b, 0, 0, 0, &mut best);
    best as f64
}

/// Every sequence of length `len` over `{0, 1, 2}`, in lexicographic order.
pub fn ternary_sequences(len: usize) -> Vec<Vec<u8>> {
    (0..3usize.pow(len as u32))
        .map(|mut code| {
            (0..len)
                .map(|_| {
                    let d = (code % 3) as u8;
                    code /= 3;
                    d
                })
                .collect()
        })
        .collect()
}

pub fn as_f64(x: &[u8]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}
