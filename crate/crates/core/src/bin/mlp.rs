fn main() {
    std::process::exit(picard_mlp::cli::main());
}
