#include "semaphore.h"
class Test {
public:
  void methodC();
  void methodD();
  void methodE();
  void methodF();
  void methodG();
private:
  Semaphore sema;
};
