#pragma once

#include <Eigen/Dense>

namespace prism {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
Mat<T> zeros(Eigen::Index rows, Eigen::Index cols) {
  return Mat<T>::Zero(rows, cols);
}

template <class T>
Mat<T> ones(Eigen::Index rows, Eigen::Index cols) {
  return Mat<T>::Ones(rows, cols);
}

template <class T>
Mat<T> scalar_mat(T v) {
  Mat<T> m(1, 1);
  m(0, 0) = v;
  return m;
}

}  // namespace prism
