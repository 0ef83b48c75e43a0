//! Sparsity grid parsing.

/// Parses `start:stop:step` (inclusive of `stop`) or a comma list. Values are
/// rounded to 10 decimals so `0.1:0.9:0.1` yields exactly `0.3`, not
/// `0.30000000000000004`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, String> {
    let round = |v: f64| (v * 1e10).round() / 1e10;
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("not a number: {s:?}"));
    let mut values = if let Some((start, rest)) = text.split_once(':') {
        let (stop, step) = rest.split_once(':').ok_or_else(|| format!("expected start:stop:step, got {text:?}"))?;
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if step.is_nan() || step <= 0.0 || stop < start {
            return Err(format!("empty range {text:?}"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| round(start + i as f64 * step)).collect::<Vec<_>>()
    } else {
        text.split(',').filter(|s| !s.trim().is_empty()).map(num).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() {
        return Err("no sparsities given".into());
    }
    if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(format!("sparsity {bad} outside [0, 1]"));
    }
    values.sort_by(f64::total_cmp);
    values.dedup();
    Ok(values)
}
