# Model core: CTMC algebra, likelihood, graphs, G-Wishart, mixture
