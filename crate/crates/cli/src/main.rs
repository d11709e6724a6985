use clap::Parser;

fn main() {
    let cli = sdfsim_cli::Cli::parse();
    if let Err(e) = sdfsim_cli::run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
