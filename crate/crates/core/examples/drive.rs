// Dev harness: run a bundled scenario and dump summary plus chosen columns.
use actplan_core::scenario;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let name = args.first().expect("usage: drive <scenario> [col ...]");
    let s = scenario::resolve(name).expect("load");
    let t0 = std::time::Instant::now();
    let out = scenario::simulate(&s, None).expect("simulate");
    let dt = t0.elapsed();
    println!("ran {} ticks in {:.3}s", out.log.rows.len(), dt.as_secs_f64());
    for a in &out.summary.assertions {
        println!(
            "{} {} measured={:.6} threshold={:.6} ({})",
            if a.passed { "PASS" } else { "FAIL" },
            a.name,
            a.measured,
            a.threshold,
            a.detail
        );
    }
    std::fs::write("/tmp/drive.csv", out.log.to_csv()).expect("write csv");
    for col in &args[1..] {
        match out.log.column(col) {
            Ok(v) => {
                let n = v.len();
                let pick = |i: usize| v[i];
                println!(
                    "{col}: t0={:.4} q1={:.4} mid={:.4} q3={:.4} end={:.4}",
                    pick(0),
                    pick(n / 4),
                    pick(n / 2),
                    pick(3 * n / 4),
                    pick(n - 1)
                );
            }
            Err(e) => println!("{col}: {e}"),
        }
    }
}
