//! Number formatting shared by the CSV and report writers.

/// Formats `x` with 9 significant digits, `%g`-style: fixed notation for
/// moderate exponents, scientific otherwise, trailing zeros trimmed.
pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..9).contains(&exp) {
        let s = format!("{x:.8e}");
        let (mant, e) = s.split_once('e').unwrap_or((&s, "0"));
        return format!("{}e{}", trim_zeros(mant), e);
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Formats a unit-interval rate as a percentage with two decimals.
pub fn percent(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(-2.5), "-2.5");
        assert_eq!(sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(sig9(123456.789012), "123456.789");
        assert_eq!(sig9(1e-7), "1e-7");
        assert_eq!(sig9(6.02214076e23), "6.02214076e23");
        assert_eq!(sig9(f64::INFINITY), "inf");
        assert_eq!(percent(0.965), "96.50%");
        for x in [0.1234567891234, 98765.4321, 3.0e-3, -7.77e12] {
            let back: f64 = sig9(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-8);
        }
    }
}
