//! C99-style hexadecimal float formatting and parsing.
//!
//! Text artifacts that must round-trip bit-exactly (bin boundaries,
//! normalization stats, resolved configs) store `f64` values in hex-float
//! form, e.g. `0x1.921fb54442d18p+1`. Every finite `f64` formats to at most
//! 13 fractional hex digits, so parsing recovers the original bits exactly.

use crate::error::{Error, Result};

/// Formats a float as a hex literal that [`parse_hex_f64`] inverts exactly.
pub fn format_hex_f64(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_string();
    }
    if v.is_infinite() {
        return if v < 0.0 { "-inf".to_string() } else { "inf".to_string() };
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & 0x000f_ffff_ffff_ffff;
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, frac, p) = if exp == 0 {
        // subnormal: 0.mant * 2^-1022
        ("0", mant, -1022i64)
    } else {
        ("1", mant, exp - 1023)
    };
    let mut digits = format!("{frac:013x}");
    while digits.len() > 1 && digits.ends_with('0') {
        digits.pop();
    }
    if frac == 0 {
        format!("{sign}0x{lead}p{p:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{p:+}")
    }
}

/// Parses the hex-float form produced by [`format_hex_f64`].
pub fn parse_hex_f64(s: &str) -> Result<f64> {
    let bad = |msg: &str| Error::Parse { line: 0, msg: format!("{msg}: {s:?}") };
    match s {
        "nan" => return Ok(f64::NAN),
        "inf" => return Ok(f64::INFINITY),
        "-inf" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    let (neg, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let rest = rest
        .strip_prefix("0x")
        .or_else(|| rest.strip_prefix("0X"))
        .ok_or_else(|| bad("missing 0x prefix"))?;
    let p_pos = rest
        .find(['p', 'P'])
        .ok_or_else(|| bad("missing binary exponent"))?;
    let (mant_s, exp_s) = rest.split_at(p_pos);
    let exp2: i64 = exp_s[1..].parse().map_err(|_| bad("bad exponent"))?;
    let (int_s, frac_s) = match mant_s.find('.') {
        Some(i) => (&mant_s[..i], &mant_s[i + 1..]),
        None => (mant_s, ""),
    };
    if int_s.is_empty() || frac_s.len() > 14 {
        return Err(bad("bad mantissa"));
    }
    let mut mant: u64 = 0;
    for c in int_s.chars().chain(frac_s.chars()) {
        let d = c.to_digit(16).ok_or_else(|| bad("bad hex digit"))? as u64;
        mant = mant.checked_mul(16).and_then(|m| m.checked_add(d)).ok_or_else(|| bad("mantissa overflow"))?;
    }
    let scale = exp2 - 4 * frac_s.len() as i64;
    let mut v = mant as f64;
    // Exact power-of-two scaling in safe chunks.
    let mut k = scale;
    while k > 0 {
        let step = k.min(512);
        v *= f64::from_bits(((step + 1023) as u64) << 52);
        k -= step;
    }
    while k < 0 {
        let step = (-k).min(512);
        v /= f64::from_bits(((step + 1023) as u64) << 52);
        k += step;
    }
    Ok(if neg { -v } else { v })
}
