use gmra::prune;
use gmra::synth::{generate, GeneratorKind, GeneratorSpec};
use gmra::transforms::{fgwt_batch, per_scale_magnitudes, threshold_coefficients, ThresholdMode};
use gmra::tree::{build_tree, SplitMethod, StoppingRule};
use gmra::wavelets::{construct_gmra, DimensionPolicy, ErrorNorm, GmraVariants};

#[test]
fn dump_swissroll_scaling() {
    let cloud = generate(&GeneratorSpec {
        kind: GeneratorKind::SwissRoll, n: 10_000, ambient_dim: 50, noise_sigma: 0.0, seed: 101,
    }).unwrap();
    let tree = build_tree(&cloud, SplitMethod::IteratedPca, &StoppingRule::for_dimension(2), 101).unwrap();
    let model = construct_gmra(&cloud, &tree, &DimensionPolicy::fixed(2), 1e-5, GmraVariants::default()).unwrap();
    let coeffs = fgwt_batch(&model, &cloud).unwrap();
    let mags = per_scale_magnitudes(&model, &coeffs);
    let diam = tree.cell_diameter_stats(&cloud);
    println!("max_scale={}", model.max_scale());
    for j in 0..=model.max_scale() {
        let e = model.approximation_error(&cloud, j, ErrorNorm::L2Absolute);
        let m = mags.iter().find(|m| m.scale == j);
        let d = diam.iter().find(|d| d.scale == j);
        println!("j={j:2} cells={:4} radius={:9.4} E_j={:10.3e} mean|q|={:10.3e} pts={}",
            d.map_or(0, |d| d.cell_count),
            d.map_or(0.0, |d| d.mean_radius),
            e,
            m.map_or(0.0, |m| m.mean_block_norm),
            m.map_or(0, |m| m.points));
    }
    // threshold sweep
    println!("--- threshold sweep (tangential ON) ---");
    for i in 0..13 {
        let delta = 10f64.powf(-4.0 + 3.0 * i as f64 / 12.0);
        let (_, report) = threshold_coefficients(&model, &cloud, &coeffs, delta, ThresholdMode::Entrywise).unwrap();
        println!("delta={delta:10.3e} kept={:7} rms={:10.4e}", report.kept, report.rms_error);
    }
    // svd + gmra cost curves
    println!("--- svd rank curve ---");
    for r in prune::svd_baseline(&cloud, Some(6)).unwrap() {
        println!("rank={} coeff={} err={:.4e}", r.parameter, r.cost.coefficients, r.error_abs);
    }
    let model_nt = construct_gmra(&cloud, &tree, &DimensionPolicy::fixed(2), 1e-5,
        GmraVariants { tangential_corrections: false, split_shared_wavelets: true }).unwrap();
    let coeffs_nt = fgwt_batch(&model_nt, &cloud).unwrap();
    let deltas: Vec<f64> = (0..17).map(|i| 10f64.powf(-5.0 + 5.0 * i as f64 / 16.0)).collect();
    println!("--- gmra curve (no tangent) ---");
    for r in prune::gmra_cost_curve(&model_nt, &cloud, &coeffs_nt, &deltas, "gmra").unwrap() {
        println!("delta={:10.3e} coeff={:7} err={:.4e}", r.parameter, r.cost.coefficients, r.error_abs);
    }
}
