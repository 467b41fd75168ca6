fn main() {
    std::process::exit(mmf::cli::main_entry());
}
