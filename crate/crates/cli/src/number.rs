//! Numeric output at nine significant digits, in the style of C's `%.9g`.

const DIGITS: i32 = 9;

pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    // Round first so the exponent reflects the rounded value (9.9999999995 -> 10).
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..DIGITS).contains(&exp) {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa.to_string()))
    }
}

fn trim(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::sig9;

    #[test]
    fn formats_like_printf_g() {
        assert_eq!(sig9(0.5), "0.5");
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(2.0 / 3.0), "0.666666667");
        assert_eq!(sig9(-1234.5), "-1234.5");
        assert_eq!(sig9(123456789.4), "123456789");
        assert_eq!(sig9(1234567890.0), "1.23456789e9");
        assert_eq!(sig9(1.5e-7), "1.5e-7");
        assert_eq!(sig9(0.99999999996), "1");
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(f64::NAN), "NaN");
    }
}
