use clap::Parser;

fn main() {
    let cli = gnss_pf::cli::Cli::parse();
    if let Err(e) = gnss_pf::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(gnss_pf::cli::exit_code(&e));
    }
}
