//! Runs the argument-free examples so they keep compiling and finishing.

macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!("../examples/", stringify!($name), ".rs"));

            #[test]
            fn runs() {
                main().unwrap();
            }
        }
    };
}

example!(kernel_approximation);
example!(density_matrix_kde);
example!(autoencoder_pretrain);
example!(gradient_check);
example!(friedman);
example!(grid_search);
