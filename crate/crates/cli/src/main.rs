use clap::Parser;
use myga_cli::{run, Args};

fn main() {
    let args = Args::parse();
    let code = match run(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("myga: {e}");
            1
        }
    };
    std::process::exit(code);
}
