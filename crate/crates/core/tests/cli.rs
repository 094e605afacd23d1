//! The installed binary: process exit codes and byte-stable output.

use std::process::{Command, Output};

fn gittins(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gittins")).args(args).output().expect("binary runs")
}

#[test]
fn success_exits_zero() {
    let out = gittins(&["index", "--v0", "0.1", "--beta", "0.9", "--method", "ca"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("method,value,diagnostics\nca,"));
}

#[test]
fn validation_failures_exit_two() {
    assert_eq!(gittins(&["index", "--v0", "-1", "--beta", "0.9"]).status.code(), Some(2));
    assert_eq!(gittins(&["table1", "--betas", "1.5"]).status.code(), Some(2));
    assert_eq!(gittins(&["bogus"]).status.code(), Some(2));
    let out = gittins(&["rho", "--samples", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_samples"));
}

#[test]
fn output_is_byte_stable() {
    let args = ["simulate", "--arms", "0:1,0.1:0.5:2", "--replications", "300", "--policies", "ca,avg,greedy", "--seed", "9"];
    let a = gittins(&args);
    let b = gittins(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let t1 = gittins(&["table1", "--methods", "ca,ua"]);
    assert_eq!(t1.stdout, gittins(&["table1", "--methods", "ca,ua"]).stdout);
}
