use crate::error::{DataError, Result};

fn check_sorted(src_t: &[f64], src_v_len: usize) -> Result<()> {
    if src_t.len() != src_v_len {
        return Err(DataError::Contract(format!("{} timestamps for {} values", src_t.len(), src_v_len)));
    }
    if src_t.len() < 2 {
        return Err(DataError::Contract("need at least two samples".into()));
    }
    if src_t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DataError::Contract("source timestamps must be strictly increasing".into()));
    }
    Ok(())
}

/// Linear interpolation of `(src_t, src_v)` at `dst_t`, clamped to the end
/// values outside the source range.
pub fn resample_linear(src_t: &[f64], src_v: &[f64], dst_t: &[f64]) -> Result<Vec<f64>> {
    check_sorted(src_t, src_v.len())?;
    let last = src_t.len() - 1;
    Ok(dst_t
        .iter()
        .map(|&t| {
            if t <= src_t[0] {
                return src_v[0];
            }
            if t >= src_t[last] {
                return src_v[last];
            }
            // First index with src_t[i] > t; t lies in [src_t[i-1], src_t[i]).
            let i = src_t.partition_point(|&s| s <= t);
            let (t0, t1) = (src_t[i - 1], src_t[i]);
            if t == t0 {
                return src_v[i - 1];
            }
            let a = (t - t0) / (t1 - t0);
            src_v[i - 1] + a * (src_v[i] - src_v[i - 1])
        })
        .collect())
}

/// Integral of the clamped linear interpolant from `from` to `to`.
pub fn integrate_linear(src_t: &[f64], src_v: &[f64], from: f64, to: f64) -> Result<f64> {
    check_sorted(src_t, src_v.len())?;
    if to < from {
        return Ok(-integrate_linear(src_t, src_v, to, from)?);
    }
    let mut knots = vec![from];
    knots.extend(src_t.iter().copied().filter(|&t| t > from && t < to));
    knots.push(to);
    let vals = resample_linear(src_t, src_v, &knots)?;
    Ok(knots.windows(2).zip(vals.windows(2)).map(|(t, v)| 0.5 * (v[0] + v[1]) * (t[1] - t[0])).sum())
}
