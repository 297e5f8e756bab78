//! Shared decimal formatting for every text output (17 significant digits).

use std::io::Write;

/// 17 significant digits, round-trips any finite `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_digest_header<W: Write>(out: &mut W, digest: &str) -> std::io::Result<()> {
    writeln!(out, "# config_digest: {digest}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let back: f64 = fmt_f64(v).parse().unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
