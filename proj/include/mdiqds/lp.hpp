#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace mdiqds::lp {

// Dense two-phase simplex for small problems:
//   minimize c.x  subject to  A x <= b, x >= 0.
// Bland's rule keeps it cycle-free; fine at the few-dozen-variable scale
// the decoy estimator needs.
struct LpResult {
    enum class Status { optimal, infeasible, unbounded };
    Status status = Status::infeasible;
    double objective = 0;
    std::vector<double> x;
};

class Simplex {
  public:
    Simplex(std::vector<double> c, std::vector<std::vector<double>> a, std::vector<double> b)
        : c_(std::move(c)), a_(std::move(a)), b_(std::move(b)) {
        m_ = a_.size();
        n_ = c_.size();
        for (const auto& row : a_)
            if (row.size() != n_) throw std::invalid_argument("Simplex: ragged constraint matrix");
        if (b_.size() != m_) throw std::invalid_argument("Simplex: rhs size mismatch");
    }

    LpResult solve() {
        build_tableau();
        if (!run_phase(true)) return {LpResult::Status::infeasible, 0, {}};
        if (tab_[m_].back() < -kTol * 10) return {LpResult::Status::infeasible, 0, {}};
        purge_artificials();
        load_phase2_costs();
        if (!run_phase(false)) return {LpResult::Status::unbounded, 0, {}};
        LpResult res;
        res.status = LpResult::Status::optimal;
        res.x.assign(n_, 0.0);
        for (std::size_t i = 0; i < m_; ++i)
            if (basis_[i] < n_) res.x[basis_[i]] = tab_[i].back();
        res.objective = 0;
        for (std::size_t j = 0; j < n_; ++j) res.objective += c_[j] * res.x[j];
        return res;
    }

  private:
    static constexpr double kTol = 1e-9;

    void build_tableau() {
        // Columns: n original, m slack, m artificial, rhs.
        width_ = n_ + 2 * m_ + 1;
        tab_.assign(m_ + 1, std::vector<double>(width_, 0.0));
        basis_.assign(m_, 0);
        for (std::size_t i = 0; i < m_; ++i) {
            const double sign = b_[i] < 0 ? -1.0 : 1.0;
            for (std::size_t j = 0; j < n_; ++j) tab_[i][j] = sign * a_[i][j];
            tab_[i][n_ + i] = sign;              // slack
            tab_[i][n_ + m_ + i] = 1.0;          // artificial
            tab_[i].back() = sign * b_[i];
            basis_[i] = n_ + m_ + i;
        }
        // Phase-1 objective: minimize sum of artificials. With artificials
        // basic, the reduced-cost row is minus the sum of constraint rows on
        // the non-artificial columns.
        auto& z = tab_[m_];
        for (std::size_t j = 0; j < width_; ++j) {
            double s = 0;
            for (std::size_t i = 0; i < m_; ++i) s += tab_[i][j];
            z[j] = -s;
        }
        for (std::size_t i = 0; i < m_; ++i) z[n_ + m_ + i] = 0.0;
    }

    bool run_phase(bool phase1) {
        const std::size_t limit = phase1 ? width_ - 1 : n_ + m_;  // phase 2 never re-enters artificials
        for (std::size_t iter = 0; iter < 50000; ++iter) {
            std::size_t enter = width_;
            for (std::size_t j = 0; j < limit; ++j)
                if (tab_[m_][j] < -kTol) {
                    enter = j;
                    break;
                }
            if (enter == width_) return true;  // optimal for this phase
            std::size_t leave = m_;
            double best = 0;
            for (std::size_t i = 0; i < m_; ++i) {
                if (tab_[i][enter] <= kTol) continue;
                const double ratio = tab_[i].back() / tab_[i][enter];
                if (leave == m_ || ratio < best - kTol ||
                    (ratio < best + kTol && basis_[i] < basis_[leave])) {
                    leave = i;
                    best = ratio;
                }
            }
            if (leave == m_) return phase1 ? true : false;  // unbounded (phase 1 never is)
            pivot(leave, enter);
        }
        throw std::runtime_error("Simplex: iteration limit reached");
    }

    void purge_artificials() {
        for (std::size_t i = 0; i < m_; ++i) {
            if (basis_[i] < n_ + m_) continue;
            std::size_t col = width_;
            for (std::size_t j = 0; j < n_ + m_; ++j)
                if (std::abs(tab_[i][j]) > kTol) {
                    col = j;
                    break;
                }
            if (col == width_) {
                // Redundant row; park the artificial at zero.
                tab_[i].back() = 0;
                continue;
            }
            pivot(i, col);
        }
    }

    void load_phase2_costs() {
        auto& z = tab_[m_];
        std::fill(z.begin(), z.end(), 0.0);
        for (std::size_t j = 0; j < n_; ++j) z[j] = c_[j];
        // Price out the basic columns.
        for (std::size_t i = 0; i < m_; ++i) {
            if (basis_[i] >= n_) continue;
            const double cb = c_[basis_[i]];
            if (cb == 0.0) continue;
            for (std::size_t j = 0; j < width_; ++j) z[j] -= cb * tab_[i][j];
        }
    }

    void pivot(std::size_t row, std::size_t col) {
        const double p = tab_[row][col];
        for (auto& v : tab_[row]) v /= p;
        for (std::size_t i = 0; i <= m_; ++i) {
            if (i == row) continue;
            const double f = tab_[i][col];
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < width_; ++j) tab_[i][j] -= f * tab_[row][j];
        }
        basis_[row] = col;
    }

    std::vector<double> c_;
    std::vector<std::vector<double>> a_;
    std::vector<double> b_;
    std::size_t m_ = 0, n_ = 0, width_ = 0;
    std::vector<std::vector<double>> tab_;
    std::vector<std::size_t> basis_;
};

inline LpResult solve_min(std::vector<double> c, std::vector<std::vector<double>> a,
                          std::vector<double> b) {
    return Simplex(std::move(c), std::move(a), std::move(b)).solve();
}

}  // namespace mdiqds::lp
