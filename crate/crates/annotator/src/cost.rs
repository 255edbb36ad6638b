#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("average input length must be positive, got {0}")]
    InputLength(f64),
    #[error("token counts and prices must be nonnegative")]
    Negative,
}

/// Extra annotation cost per million input tokens with separate prompt and
/// completion prices (both quoted per million tokens):
/// `prompt / input * price_in + completion / input * price_out`.
pub fn estimate_cost(avg_input: f64, avg_prompt: f64, avg_completion: f64, price_in: f64, price_out: f64) -> Result<f64, CostError> {
    if !(avg_input > 0.0) {
        return Err(CostError::InputLength(avg_input));
    }
    if [avg_prompt, avg_completion, price_in, price_out].iter().any(|v| !(*v >= 0.0)) {
        return Err(CostError::Negative);
    }
    Ok(avg_prompt / avg_input * price_in + avg_completion / avg_input * price_out)
}

/// Same estimate when prompt and completion tokens share one price.
pub fn estimate_cost_single_rate(avg_input: f64, avg_prompt: f64, avg_completion: f64, price: f64) -> Result<f64, CostError> {
    estimate_cost(avg_input, avg_prompt, avg_completion, price, price)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_figures() {
        let usd = estimate_cost(168.4, 570.0, 163.9, 2.50, 10.00).unwrap();
        assert!((usd - 18.19).abs() < 0.01, "{usd}");
        let cny = estimate_cost_single_rate(168.4, 570.0, 163.9, 0.25).unwrap();
        assert!((cny - 1.09).abs() < 0.005, "{cny}");
        assert_eq!(estimate_cost(168.4, 570.0, 163.9, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(estimate_cost(0.0, 1.0, 1.0, 1.0, 1.0), Err(CostError::InputLength(0.0)));
        assert_eq!(estimate_cost(1.0, -1.0, 1.0, 1.0, 1.0), Err(CostError::Negative));
    }
}
