fn main() {
    std::process::exit(wino3d::cli::run());
}
