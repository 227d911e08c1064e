mod common;

#[test]
fn exact_knn_matches_brute_force() {
    common::exact_knn_matches_brute_force();
}

#[test]
fn nearest_agrees_with_knn_one() {
    common::nearest_agrees_with_knn_one();
}

#[test]
fn approximate_knn_recall_is_high_on_small_sets() {
    common::approximate_knn_recall_is_high_on_small_sets();
}

#[test]
fn pwm_matches_sort_and_scan_oracle() {
    common::pwm_matches_sort_and_scan_oracle();
}

#[test]
fn router_matches_nearest_center_oracle() {
    common::router_matches_nearest_center_oracle();
}

#[test]
fn smo_solution_satisfies_kkt() {
    common::smo_solution_satisfies_kkt();
}
