//! Minimal bridge protocol server used by the integration tests.
//!
//! ```text
//! geoshap-bridge-stub --features N [--function sum|linear:c0,c1,...]
//!     [--parallel] [--delay-ms N] [--fail-on N] [--garbage-on N]
//!     [--short-on N] [--exit-on N]
//! ```
//!
//! `linear` takes the intercept first. The `*-on N` switches inject a fault
//! on the N-th predict request (1-based): an error reply, a non-JSON line, a
//! reply with one value missing, or an abrupt exit.

use std::io::{self, Write};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use geoshapley::bridge::serve;

#[derive(Default)]
struct Args {
    features: Option<usize>,
    coefficients: Option<Vec<f64>>,
    parallel: bool,
    delay_ms: u64,
    fail_on: Option<usize>,
    garbage_on: Option<usize>,
    short_on: Option<usize>,
    exit_on: Option<usize>,
}

fn parse_args() -> Result<Args, String> {
    let mut args = Args::default();
    let mut it = std::env::args().skip(1);
    let number = |v: Option<String>, flag: &str| -> Result<usize, String> {
        v.ok_or(format!("{flag} needs a value"))?
            .parse()
            .map_err(|_| format!("{flag} needs an integer"))
    };
    while let Some(flag) = it.next() {
        match flag.as_str() {
            "--features" => args.features = Some(number(it.next(), &flag)?),
            "--function" => {
                let f = it.next().ok_or("--function needs a value")?;
                if f == "sum" {
                    args.coefficients = None;
                } else if let Some(list) = f.strip_prefix("linear:") {
                    let c: Result<Vec<f64>, _> = list.split(',').map(str::parse).collect();
                    args.coefficients = Some(c.map_err(|_| format!("bad coefficients '{list}'"))?);
                } else {
                    return Err(format!("unknown function '{f}'"));
                }
            }
            "--parallel" => args.parallel = true,
            "--delay-ms" => args.delay_ms = number(it.next(), &flag)? as u64,
            "--fail-on" => args.fail_on = Some(number(it.next(), &flag)?),
            "--garbage-on" => args.garbage_on = Some(number(it.next(), &flag)?),
            "--short-on" => args.short_on = Some(number(it.next(), &flag)?),
            "--exit-on" => args.exit_on = Some(number(it.next(), &flag)?),
            other => return Err(format!("unknown argument '{other}'")),
        }
    }
    Ok(args)
}

fn main() -> ExitCode {
    let args = match parse_args() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("geoshap-bridge-stub: {e}");
            return ExitCode::from(2);
        }
    };
    let arity = match (args.features, &args.coefficients) {
        (Some(n), _) => n,
        (None, Some(c)) => c.len() - 1,
        (None, None) => {
            eprintln!("geoshap-bridge-stub: --features is required");
            return ExitCode::from(2);
        }
    };
    if let Some(c) = &args.coefficients {
        if c.len() != arity + 1 {
            eprintln!("geoshap-bridge-stub: linear needs {} coefficients", arity + 1);
            return ExitCode::from(2);
        }
    }
    let calls = AtomicUsize::new(0);
    let predict = |x: &[Vec<f64>]| -> Result<Vec<f64>, String> {
        let call = calls.fetch_add(1, Ordering::SeqCst) + 1;
        if args.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(args.delay_ms));
        }
        if args.exit_on == Some(call) {
            std::process::exit(3);
        }
        if args.garbage_on == Some(call) {
            let mut out = io::stdout().lock();
            let _ = out.write_all(b"this is not a frame\n");
            let _ = out.flush();
        }
        if args.fail_on == Some(call) {
            return Err(format!("injected failure on request {call}"));
        }
        let mut y: Vec<f64> = x
            .iter()
            .map(|row| match &args.coefficients {
                None => row.iter().sum(),
                Some(c) => c[0] + row.iter().zip(&c[1..]).map(|(a, b)| a * b).sum::<f64>(),
            })
            .collect();
        if args.short_on == Some(call) {
            y.pop();
        }
        Ok(y)
    };
    let stdin = io::stdin().lock();
    let stdout = io::stdout();
    match serve(stdin, stdout, arity, args.parallel, predict) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("geoshap-bridge-stub: {e}");
            ExitCode::from(1)
        }
    }
}
