//! The command-line workflow driven in-process: data, suite, a short training
//! run, evaluation and a render.

use adaptpoint::cli::main_with_args;

fn run(args: &[&str]) {
    println!("$ adaptpoint {}", args.join(" "));
    let code = main_with_args(std::iter::once("adaptpoint").chain(args.iter().copied()));
    assert_eq!(code, 0, "command failed");
}

fn main() {
    let root = std::env::temp_dir().join("adaptpoint-cli");
    let p = |s: &str| root.join(s).display().to_string();
    let cfg = p("small.cfg");
    std::fs::create_dir_all(&root).expect("temp dir");
    std::fs::write(&cfg, "data.samples_per_class=12\ntrain.epochs=1\n").expect("config");
    let (data, suite, run_dir, ev, aug, svg) = (p("data"), p("suite"), p("run"), p("eval"), p("aug"), p("svg"));
    run(&["--config", &cfg, "--out", &data, "gen-data"]);
    run(&["--config", &cfg, "--out", &suite, "corrupt", "--dataset", &data]);
    run(&["--config", &cfg, "--out", &run_dir, "train", "--dataset", &data]);
    let ckpt = format!("{run_dir}/epoch_001.ckpt");
    run(&["--config", &cfg, "--out", &ev, "eval", "--dataset", &data, "--suite", &suite, "--checkpoint", &ckpt]);
    let errs = format!("{ev}/errors.tsv");
    run(&[
        "--config", &cfg, "--out", &ev, "eval", "--dataset", &data, "--suite", &suite, "--checkpoint", &ckpt,
        "--baseline-errors", &errs,
    ]);
    run(&["--config", &cfg, "--out", &aug, "augment", "--checkpoint", &ckpt, "--input", &data, "--limit", "2"]);
    let first = format!("{aug}/test_00000.pcb");
    run(&["--out", &svg, "render", "--input", &first, "--color", "mask"]);
}
