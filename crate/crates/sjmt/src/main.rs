use clap::Parser;

fn main() {
    let cli = sjmt::cli::Cli::parse();
    std::process::exit(sjmt::cli::run(cli));
}
