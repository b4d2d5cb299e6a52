use hpr_core::config::RunConfig;
use hpr_core::pipeline::run_demo;
use hpr_core::scene::SceneSpec;

const PUBLIC_OPS: &[&str] = &[
    "matmul",
    "softmax_rows",
    "finite_diff_gradient",
    "extract_masked_pairs",
    "ransac_linear_fit",
    "apply_alignment",
    "align_frame",
    "unproject",
    "project",
    "bbox_from_smpl",
    "crop",
    "bicubic_upsample",
    "integrate_refined",
    "refinement_trigger",
    "patch_embed",
    "cross_attention",
    "gate_fuse",
    "zero_conv_inject",
    "naive_fuse_inject",
    "refine_inject_first",
    "cross_module_attention",
    "ffm_forward",
    "norm_factor",
    "confidence_loss",
    "loss_with_shared_norm",
    "align_depth_scale",
    "depth_metrics",
    "umeyama_align",
    "ate",
    "rpe",
    "associate_timestamps",
    "read_pfm",
    "write_pfm",
    "read_tum",
    "write_tum",
    "generate_scene",
];

#[test]
fn demo_passes_and_covers_every_operation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default().with_seed(7);
    let report = run_demo(&cfg, &SceneSpec::default(), dir.path()).unwrap();
    for p in &report.properties {
        println!("{} {} {}", p.name, p.passed, p.detail);
    }
    assert!(report.passed());
    let missing: Vec<_> = PUBLIC_OPS
        .iter()
        .filter(|op| !report.exercised_ops.contains(op))
        .collect();
    assert!(missing.is_empty(), "demo never exercised {missing:?}");
    assert!(report.frames.iter().all(|f| f.refined.is_some()));
}

#[test]
fn demo_reports_are_reproducible() {
    let cfg = RunConfig::default().with_seed(3);
    let read = |d: &std::path::Path| {
        ["report.json", "report.csv", "pose.csv"].map(|n| std::fs::read(d.join(n)).unwrap())
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_demo(&cfg, &SceneSpec::default(), a.path()).unwrap();
    run_demo(&cfg, &SceneSpec::default(), b.path()).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}
