use std::io::{self, BufReader};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut input = BufReader::new(io::stdin());
    let mut out = io::stdout();
    let mut err = io::stderr();
    std::process::exit(decitree_service::cli::dispatch(std::env::args_os(), &mut input, &mut out, &mut err));
}
