/// Horvitz-Thompson mean `sum_j w_j * phi(r_j) / n_cohort` over the selected
/// records.
pub fn weighted_mean_functional<T>(records: &[T], weights: &[f64], phi: impl Fn(&T) -> f64, n_cohort: usize) -> f64 {
    debug_assert_eq!(records.len(), weights.len());
    records.iter().zip(weights).map(|(r, w)| w * phi(r)).sum::<f64>() / n_cohort as f64
}
