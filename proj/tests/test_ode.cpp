#include <gtest/gtest.h>

#include "spinmem/ode.hpp"

using namespace spinmem;
using cplx = std::complex<double>;

TEST(Ode, ComplexExponentialToTolerance) {
    const cplx lam(-0.3, 5.0);
    auto rhs = [&](double, const Eigen::VectorXcd& y, Eigen::VectorXcd& dy) { dy = lam * y; };
    Eigen::VectorXcd y0(1);
    y0(0) = 1.0;
    OdeOptions opt;
    opt.atol = 1e-12;
    double max_dense = 0.0;
    auto obs = [&](const DenseStep& ds) {
        for (double th : {0.25, 0.5, 0.9}) {
            const double t = ds.t0 + th * ds.h;
            max_dense = std::max(max_dense, std::abs(ds.at(t)(0) - std::exp(lam * t)));
            const auto p = ds.coeffs(0);
            const cplx v = p[0] + th * (p[1] + th * (p[2] + th * (p[3] + th * p[4])));
            EXPECT_LT(std::abs(v - ds.at(t)(0)), 1e-14);
        }
    };
    OdeStats st;
    const Eigen::VectorXcd y = dopri5(rhs, 0.0, 4.0, y0, opt, obs, &st);
    EXPECT_LT(std::abs(y(0) - std::exp(lam * 4.0)), 1e-10);
    EXPECT_LT(max_dense, 1e-9);
    EXPECT_GT(st.accepted, 10u);
}

TEST(Ode, EndsExactlyAtT1) {
    auto rhs = [](double t, const Eigen::VectorXcd&, Eigen::VectorXcd& dy) { dy(0) = t * t; };
    double last_end = 0.0;
    auto obs = [&](const DenseStep& ds) { last_end = ds.t0 + ds.h; };
    const Eigen::VectorXcd y = dopri5(rhs, 0.0, 3.0, Eigen::VectorXcd::Zero(1), {}, obs);
    EXPECT_NEAR(y(0).real(), 9.0, 1e-12);
    EXPECT_NEAR(last_end, 3.0, 1e-15);
}

TEST(Ode, BlowUpRaisesIntegrationError) {
    auto rhs = [](double, const Eigen::VectorXcd& y, Eigen::VectorXcd& dy) { dy = y.array().square(); };
    Eigen::VectorXcd y0(1);
    y0(0) = 1.0;  // y = 1/(1 - t)
    EXPECT_THROW(dopri5(rhs, 0.0, 2.0, y0, {}, [](const DenseStep&) {}), IntegrationError);
}

TEST(Ode, StepBudget) {
    auto rhs = [](double, const Eigen::VectorXcd& y, Eigen::VectorXcd& dy) { dy = cplx(0.0, 1e4) * y; };
    OdeOptions opt;
    opt.max_steps = 10;
    Eigen::VectorXcd y0 = Eigen::VectorXcd::Ones(1);
    EXPECT_THROW(dopri5(rhs, 0.0, 10.0, y0, opt, [](const DenseStep&) {}), IntegrationError);
}
