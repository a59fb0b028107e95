//! Joint-gap width from the row-mean intensity profile.

/// Smallest bone/gap contrast accepted as a visible gap.
const MIN_CONTRAST: f64 = 0.05;
/// Rows beyond the dark run that may still be partially covered.
const MARGIN: usize = 3;

/// Otsu threshold of a set of values: the cut maximising the between-class
/// variance.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < 2 {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let total: f64 = v.iter().sum();
    let mut best = (f64::NEG_INFINITY, None);
    let mut acc = 0.0;
    for k in 1..v.len() {
        acc += v[k - 1];
        if v[k] == v[k - 1] {
            continue;
        }
        let w0 = k as f64 / n;
        let m0 = acc / k as f64;
        let m1 = (total - acc) / (n - k as f64);
        let between = w0 * (1.0 - w0) * (m0 - m1).powi(2);
        if between > best.0 {
            best = (between, Some((v[k - 1] + v[k]) / 2.0));
        }
    }
    best.1
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Width in pixels of the dark horizontal band of a square image, or `None`
/// when no band is visible.
///
/// Rows are split into bright and dark by Otsu's threshold on the row means;
/// the longest dark run (nearest the centre on ties) is the gap. Its width
/// is the summed dark fraction of the rows around the run, with each side's
/// bone level taken from rows just outside it, so partially covered edge
/// rows contribute sub-pixel amounts.
pub fn gap_width_estimate(pixels: &[f64], side: usize) -> Option<f64> {
    if side == 0 || pixels.len() != side * side {
        return None;
    }
    let rows: Vec<f64> = pixels
        .chunks(side)
        .map(|r| r.iter().sum::<f64>() / side as f64)
        .collect();
    let thr = otsu_threshold(&rows)?;
    let mut best: Option<(usize, usize)> = None;
    let mut y = 0;
    while y < side {
        if rows[y] < thr {
            let start = y;
            while y < side && rows[y] < thr {
                y += 1;
            }
            let cand = (start, y);
            let better = match best {
                None => true,
                Some((s, e)) => {
                    let (lc, lb) = (cand.1 - cand.0, e - s);
                    let off = |a: usize, b: usize| (a + b).abs_diff(side);
                    lc > lb || (lc == lb && off(cand.0, cand.1) < off(s, e))
                }
            };
            if better {
                best = Some(cand);
            }
        } else {
            y += 1;
        }
    }
    let (start, end) = best?;
    let gap = rows[start..end].iter().cloned().fold(f64::INFINITY, f64::min);
    let lo = start.saturating_sub(MARGIN);
    let hi = (end + MARGIN).min(side);
    let above = mean(&rows[start.saturating_sub(2 * MARGIN + 2)..lo]);
    let below = mean(&rows[hi..(hi + MARGIN + 2).min(side)]);
    let (up, down) = match (above, below) {
        (Some(a), Some(b)) => (a, b),
        (Some(a), None) => (a, a),
        (None, Some(b)) => (b, b),
        (None, None) => return None,
    };
    if up - gap < MIN_CONTRAST || down - gap < MIN_CONTRAST {
        return None;
    }
    let centre = (start + end) as f64 / 2.0;
    let width = (lo..hi)
        .map(|y| {
            let bone = if (y as f64 + 0.5) < centre { up } else { down };
            ((bone - rows[y]) / (bone - gap)).clamp(0.0, 1.0)
        })
        .sum();
    Some(width)
}

/// Distance from `w` to the interval `[lo, hi]`.
pub fn distance_to_range(w: f64, lo: f64, hi: f64) -> f64 {
    if w < lo {
        lo - w
    } else if w > hi {
        w - hi
    } else {
        0.0
    }
}
