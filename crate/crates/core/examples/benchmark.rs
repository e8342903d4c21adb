//! Runs the synthetic benchmark and prints the comparison table.
//!
//! `cargo run --release --example benchmark [pretrain stage1 stage2]`

#[path = "../tests/common/mod.rs"]
mod common;

use common::benchmark::{run, Protocol};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("epoch counts")).collect();
    let mut p = Protocol::default();
    if let [pre, s1, s2] = args[..] {
        p.pretrain_epochs = pre;
        p.stage1_epochs = s1;
        p.stage2_epochs = s2;
    }
    let dir = tempfile::tempdir().expect("temp dir");
    let out = run(&p, dir.path());
    println!("{}", out.report.render_table());
    println!("total {:.1} s", out.total.as_secs_f64());
}
