use super::PortfolioState;

/// Mark-to-market value of the portfolio.
pub fn net_worth(state: &PortfolioState, price: f64) -> f64 {
    state.cash + state.holdings as f64 * price
}

/// Fraction of days on which net worth strictly exceeds the initial cash.
pub fn profitability_ratio(net_worth_trace: &[f64], initial_cash: f64) -> f64 {
    assert!(!net_worth_trace.is_empty(), "empty net-worth trace");
    let profitable = net_worth_trace.iter().filter(|&&w| w > initial_cash).count();
    profitable as f64 / net_worth_trace.len() as f64
}
