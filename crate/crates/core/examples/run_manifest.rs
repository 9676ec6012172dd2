//! Runs the command-line front end in-process and replays its manifest.

fn main() {
    let dir = std::env::temp_dir().join("sle-lab-example");
    let out = dir.display().to_string();
    let args = |s: &str| -> Vec<String> { s.split_whitespace().map(String::from).collect() };
    let code = sle_lab::cli::run(&args(&format!("sle-lab simulate --process intermediate --kappa 2 --rho 1 --p2 2 --n 500 --seed 9 --out {out}")));
    println!("simulate exited with {code}");
    let code = sle_lab::cli::run(&args(&format!("sle-lab replay {out}/manifest.json")));
    println!("replay exited with {code}");
}
