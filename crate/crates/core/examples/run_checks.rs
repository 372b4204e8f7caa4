use koopman_sp::verify::*;
use std::time::Instant;

fn main() {
    let which: Vec<String> = std::env::args().skip(1).collect();
    let run = |name: &str, f: &dyn Fn() -> CheckOutcome| {
        if which.is_empty() || which.iter().any(|w| name.contains(w.as_str())) {
            let t = Instant::now();
            let out = f();
            println!("{out}   ({:.1?})", t.elapsed());
        }
    };
    run("table", &|| criterion_cycle_table());
    run("eigen", &|| criterion_eigen_relations(2024));
    run("figure", &|| criterion_figure_signatures(true, 1));
    run("cross", &|| criterion_cross_method_oracles(2024));
    run("determinism", &|| criterion_determinism(4));
}
