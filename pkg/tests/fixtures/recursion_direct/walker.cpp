#include "semaphore.h"
class Walker {
public:
  void run() {
    step();
  }
  void step() {
    lock.enter();
    if (more) {
      step();
    }
    lock.leave();
  }
private:
  bool more;
  Semaphore lock;
};
