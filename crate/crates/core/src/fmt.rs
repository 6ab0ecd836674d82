/// Formats a real so that it parses back to the identical `f64` and always
/// carries at least nine significant digits.
pub fn real(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0.000000000".to_string();
    }
    let mut s = format!("{x}");
    let sig = significant_digits(&s);
    if sig < 9 {
        if !s.contains('.') {
            s.push('.');
        }
        s.extend(std::iter::repeat_n('0', 9 - sig));
    }
    s
}

fn significant_digits(s: &str) -> usize {
    let digits: String = s.chars().filter(|c| c.is_ascii_digit()).collect();
    let trimmed = digits.trim_start_matches('0');
    // trailing zeros of the integer part are significant when a '.' follows,
    // and Display never emits trailing zeros after the point
    trimmed.len()
}
