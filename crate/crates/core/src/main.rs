use clap::Parser;

fn main() -> std::process::ExitCode {
    let cli = radnav::cli::Cli::parse();
    std::process::ExitCode::from(radnav::cli::run(cli) as u8)
}
