//! Dense phase-one simplex, just enough for convex-hull membership.

const PIVOT_EPS: f64 = 1e-12;
const MAX_PIVOTS: usize = 50_000;

/// Minimum total artificial slack needed to satisfy `A x = b, x >= 0`.
///
/// Zero (up to round-off) means the system is feasible. `a` is row-major with
/// one `Vec` per constraint.
pub(crate) fn phase_one_infeasibility(a: &[Vec<f64>], b: &[f64]) -> f64 {
    let rows = a.len();
    if rows == 0 {
        return 0.0;
    }
    let cols = a[0].len();
    let width = cols + rows + 1;
    let rhs = width - 1;

    // Tableau rows 0..rows are constraints, the last row is the phase-one objective.
    let mut t = vec![vec![0.0; width]; rows + 1];
    for (i, (row, &bi)) in a.iter().zip(b).enumerate() {
        let sign = if bi < 0.0 { -1.0 } else { 1.0 };
        for (j, &v) in row.iter().enumerate() {
            t[i][j] = sign * v;
        }
        t[i][cols + i] = 1.0;
        t[i][rhs] = sign * bi;
    }
    for j in 0..width {
        if (cols..cols + rows).contains(&j) {
            continue;
        }
        t[rows][j] = -(0..rows).map(|i| t[i][j]).sum::<f64>();
    }
    let mut basis: Vec<usize> = (cols..cols + rows).collect();

    for _ in 0..MAX_PIVOTS {
        // Bland's rule: lowest-index improving column.
        let Some(enter) = (0..cols + rows).find(|&j| t[rows][j] < -1e-11) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..rows {
            let coef = t[i][enter];
            if coef > PIVOT_EPS {
                let ratio = t[i][rhs] / coef;
                match leave {
                    Some((li, best))
                        if ratio > best + 1e-15
                            || ((ratio - best).abs() <= 1e-15 && basis[i] > basis[li]) => {}
                    _ => leave = Some((i, ratio)),
                }
            }
        }
        let Some((pr, _)) = leave else {
            // Unbounded direction cannot occur in phase one; bail out conservatively.
            break;
        };
        let pivot = t[pr][enter];
        for v in t[pr].iter_mut() {
            *v /= pivot;
        }
        let pivot_row = t[pr].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i == pr {
                continue;
            }
            let factor = row[enter];
            if factor != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * p;
                }
            }
        }
        basis[pr] = enter;
    }
    (-t[rows][rhs]).max(0.0)
}
