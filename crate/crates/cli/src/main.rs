use clap::Parser;

fn main() {
    let cli = ctglab::args::Cli::parse();
    if let Err(e) = ctglab::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
