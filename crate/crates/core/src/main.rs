fn main() {
    std::process::exit(morse_conley::cli::main());
}
