fn main() {
    std::process::exit(swing_pinn::cli::run(std::env::args_os()));
}
